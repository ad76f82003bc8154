use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{parse_tsv, write_tsv};
use crate::entropy::EntropyReport;
use crate::error::{Result, VoltError};

/// How a vocabulary was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Volt,
    Bpe,
    MuvSearch,
    /// Loaded from a file or built by hand.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: Strategy,
    /// Schedule position that produced the vocabulary, if any.
    pub timestep: Option<usize>,
    /// Requested size budget.
    pub size: Option<usize>,
    pub config_digest: Option<String>,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            strategy: Strategy::External,
            timestep: None,
            size: None,
            config_digest: None,
        }
    }
}

/// An ordered set of tokens.
///
/// Order is meaningful: it is the priority used by the `bpe-rank` merge order.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    frequencies: Option<Vec<u64>>,
    pub provenance: Provenance,
    pub entropy: Option<EntropyReport>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.frequencies == other.frequencies
            && self.provenance == other.provenance
    }
}

impl Vocabulary {
    /// Rejects empty and duplicate tokens.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(VoltError::InvalidVocabulary("empty token".into()));
            }
            if t.chars().any(char::is_whitespace) {
                return Err(VoltError::InvalidVocabulary(format!("token {t:?} contains whitespace")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(VoltError::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            frequencies: None,
            provenance: Provenance::default(),
            entropy: None,
        })
    }

    pub fn with_frequencies(mut self, freqs: Vec<u64>) -> Result<Self> {
        if freqs.len() != self.tokens.len() {
            return Err(VoltError::InconsistentInputs(format!(
                "{} frequencies for {} tokens",
                freqs.len(),
                self.tokens.len()
            )));
        }
        self.frequencies = Some(freqs);
        Ok(self)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn frequencies(&self) -> Option<&[u64]> {
        self.frequencies.as_deref()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Position in the vocabulary order.
    pub fn rank(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Σ chars(token) / |v| over every token, frequent or not.
    pub fn avg_token_len(&self) -> f64 {
        let total: usize = self.tokens.iter().map(|t| t.chars().count()).sum();
        total as f64 / self.tokens.len() as f64
    }

    /// Characters of multi-character members that are not themselves members.
    pub fn missing_chars(&self) -> Vec<char> {
        let mut missing: Vec<char> = Vec::new();
        let mut seen = HashSet::new();
        let mut buf = [0u8; 4];
        for t in &self.tokens {
            for ch in t.chars() {
                if seen.insert(ch) && !self.contains(ch.encode_utf8(&mut buf)) {
                    missing.push(ch);
                }
            }
        }
        missing
    }

    /// True when every character of every member is itself a member.
    pub fn is_char_closed(&self) -> bool {
        self.missing_chars().is_empty()
    }

    /// `token<TAB>count` rows sorted by descending count, ties lexicographic.
    /// Tokens without recorded frequencies are written with count 0.
    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<(&str, u64)> = match &self.frequencies {
            Some(f) => self.tokens.iter().map(String::as_str).zip(f.iter().copied()).collect(),
            None => self.tokens.iter().map(|t| (t.as_str(), 0)).collect(),
        };
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        write_tsv(rows)
    }

    /// Reads a TSV vocabulary, keeping file order.
    pub fn from_tsv(origin: &str, text: &str) -> Result<Self> {
        let rows = parse_tsv(origin, text)?;
        if rows.is_empty() {
            return Err(VoltError::InvalidVocabulary(format!("{origin}: no tokens")));
        }
        let (tokens, freqs): (Vec<String>, Vec<u64>) = rows.into_iter().unzip();
        Vocabulary::from_tokens(tokens)?.with_frequencies(freqs)
    }
}
