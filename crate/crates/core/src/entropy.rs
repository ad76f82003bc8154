//! Length-normalized corpus entropy and marginal utility of vocabularization.
//!
//! Entropy is measured in nats per character:
//!
//! ```text
//! H_v = -(1 / l_v) * Σ_j P(j) ln P(j)
//! ```
//!
//! where `P(j)` is the relative frequency of token `j` when the corpus is
//! segmented with `v` and `l_v` is the mean character length of the tokens
//! of `v`. MUV is the negative finite difference of `H` with respect to size.

use serde::{Deserialize, Serialize};

use crate::corpus::{count_tokens, FrequencyTable, WordSequence};
use crate::error::{Result, VoltError};
use crate::segmenter::{MergeOrder, Segmenter};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// Nats per character.
    pub entropy: f64,
    /// Mean token length over the whole vocabulary.
    pub avg_token_len: f64,
    /// |v|.
    pub token_count: usize,
    /// Tokens with nonzero corpus frequency, fallback tokens included.
    pub distribution_size: usize,
}

/// Segments `words` with `vocab` (leftmost merge order) and measures entropy.
pub fn corpus_entropy(words: &WordSequence, vocab: &Vocabulary) -> Result<EntropyReport> {
    corpus_entropy_with(words, &Segmenter::new(vocab, MergeOrder::Leftmost))
}

pub fn corpus_entropy_with(words: &WordSequence, segmenter: &Segmenter<'_>) -> Result<EntropyReport> {
    let vocab = segmenter.vocabulary();
    if vocab.is_empty() {
        return Err(VoltError::InvalidVocabulary("empty vocabulary".into()));
    }
    let freqs = count_tokens(words, segmenter);
    Ok(entropy_from_frequencies(&freqs, vocab))
}

/// Entropy of an already segmented corpus, normalized by `vocab`'s mean length.
pub fn entropy_from_frequencies(freqs: &FrequencyTable, vocab: &Vocabulary) -> EntropyReport {
    let avg_token_len = vocab.avg_token_len();
    // BTreeMap iteration fixes the summation order, so results are bitwise stable.
    let entropy = normalized_entropy(freqs.entries().values().copied(), avg_token_len);
    EntropyReport {
        entropy,
        avg_token_len,
        token_count: vocab.len(),
        distribution_size: freqs.len(),
    }
}

/// -(1/avg_len) Σ p ln p over the given counts, with 0 ln 0 = 0.
pub fn normalized_entropy(counts: impl IntoIterator<Item = u64> + Clone, avg_len: f64) -> f64 {
    let total: u64 = counts.clone().into_iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let mut sum = 0.0;
    for c in counts {
        if c > 0 {
            let p = c as f64 / total;
            sum += p * p.ln();
        }
    }
    // -0.0 would otherwise leak out of single-token distributions
    (-sum / avg_len).max(0.0)
}

/// A vocabulary size paired with its entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizedEntropy {
    pub size: usize,
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuvScore {
    pub value: f64,
    pub size_gap: usize,
}

/// `-(H_larger - H_smaller) / (larger.size - smaller.size)`.
pub fn muv(smaller: SizedEntropy, larger: SizedEntropy) -> Result<MuvScore> {
    if larger.size <= smaller.size {
        return Err(VoltError::InvalidSizePair {
            smaller: smaller.size,
            larger: larger.size,
        });
    }
    let size_gap = larger.size - smaller.size;
    Ok(MuvScore {
        value: -(larger.entropy - smaller.entropy) / size_gap as f64,
        size_gap,
    })
}
