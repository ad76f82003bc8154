use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = VoltError> = std::result::Result<T, E>;

/// Which side of the transport problem a structural zero was found on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Char,
    Token,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Char => f.write_str("char row"),
            Axis::Token => f.write_str("token column"),
        }
    }
}

#[derive(Debug, Error)]
pub enum VoltError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("illegal size pair: larger size {larger} must exceed smaller size {smaller}")]
    InvalidSizePair { smaller: usize, larger: usize },

    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    #[error("infeasible transport: {axis} {index} ({label}) has no admissible cell")]
    InfeasibleTransport { axis: Axis, index: usize, label: String },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VoltError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VoltError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for numeric failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            VoltError::InfeasibleTransport { .. } => 2,
            _ => 1,
        }
    }
}
