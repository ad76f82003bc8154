//! Vocabulary construction by maximizing the marginal utility of
//! vocabularization (MUV).
//!
//! The pipeline: count characters and words ([`corpus`]), learn a ranked BPE
//! candidate list ([`bpe`]), and for each size budget of a schedule solve a
//! char-to-token entropic optimal transport problem ([`ot`]) whose plan
//! decides which candidates survive. Each surviving vocabulary is scored by
//! its length-normalized corpus entropy ([`entropy`]) and the timestep with
//! the largest entropy drop per added token is selected ([`pipeline`]).
//! [`segmenter`] applies a vocabulary to text.

pub mod bpe;
pub mod cli;
pub mod corpus;
pub mod entropy;
pub mod error;
pub mod ot;
pub mod pipeline;
pub mod plot;
pub mod segmenter;
pub mod vocab;

pub use bpe::{learn_bpe, top_candidates, Candidate, CandidateList, MergeRule};
pub use corpus::{count_chars, count_tokens, load_corpus, pre_tokenize, CharTable, FrequencyTable, RawCorpus, WordSequence};
pub use entropy::{corpus_entropy, muv, EntropyReport, MuvScore, SizedEntropy};
pub use error::{Result, VoltError};
pub use ot::{build_distance_matrix, extract_vocabulary, sinkhorn, DistanceMatrix, SinkhornConfig, TransportPlan};
pub use pipeline::{muv_search, run_volt, TimestepSchedule, VoltConfig, VoltReport};
pub use segmenter::{decode, MergeOrder, Segmenter, TokenSequence};
pub use vocab::Vocabulary;
