//! Greedy merge segmentation and decoding.
//!
//! A word starts as one token per character. Adjacent tokens are merged
//! whenever their concatenation is a vocabulary member, until no merge
//! applies. Characters outside the vocabulary stay as single-character
//! fallback tokens and are flagged.

use serde::{Deserialize, Serialize};

use crate::vocab::Vocabulary;

/// Which mergeable pair is merged first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeOrder {
    /// Leftmost mergeable pair, rescanning from the left after each merge.
    #[default]
    Leftmost,
    /// Pair whose merged token comes earliest in vocabulary order; ties go left.
    BpeRank,
}

/// One encoded word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedWord {
    pub tokens: Vec<String>,
    pub oov: Vec<bool>,
}

/// Tokens grouped by word.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub words: Vec<EncodedWord>,
}

impl TokenSequence {
    pub fn oov_count(&self) -> usize {
        self.words.iter().flat_map(|w| &w.oov).filter(|&&f| f).count()
    }

    /// Tokens joined by single spaces; OOV tokens replaced by `unk` when given.
    pub fn render(&self, unk: Option<&str>) -> String {
        let mut out = String::new();
        for w in &self.words {
            for (tok, &oov) in w.tokens.iter().zip(&w.oov) {
                if !out.is_empty() {
                    out.push(' ');
                }
                match unk {
                    Some(u) if oov => out.push_str(u),
                    _ => out.push_str(tok),
                }
            }
        }
        out
    }
}

/// Greedy encoder over a borrowed vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct Segmenter<'v> {
    vocab: &'v Vocabulary,
    order: MergeOrder,
    marker: Option<&'v str>,
}

impl<'v> Segmenter<'v> {
    pub fn new(vocab: &'v Vocabulary, order: MergeOrder) -> Self {
        Segmenter {
            vocab,
            order,
            marker: None,
        }
    }

    /// Appends `marker` to every word before segmenting it.
    pub fn with_marker(mut self, marker: Option<&'v str>) -> Self {
        self.marker = marker;
        self
    }

    pub fn vocabulary(&self) -> &'v Vocabulary {
        self.vocab
    }

    /// Byte spans of the tokens of `word`. The marker is not applied here.
    pub fn segment_spans(&self, word: &str) -> Vec<(usize, usize)> {
        let mut spans: Vec<(usize, usize)> = word
            .char_indices()
            .map(|(i, c)| (i, i + c.len_utf8()))
            .collect();
        match self.order {
            MergeOrder::Leftmost => self.merge_leftmost(word, &mut spans),
            MergeOrder::BpeRank => self.merge_by_rank(word, &mut spans),
        }
        spans
    }

    // Pairs left of a merge point were already rejected and are unchanged,
    // so resuming one position before the merge is the same as a full restart.
    fn merge_leftmost(&self, word: &str, spans: &mut Vec<(usize, usize)>) {
        let mut i = 0;
        while i + 1 < spans.len() {
            if self.vocab.contains(&word[spans[i].0..spans[i + 1].1]) {
                spans[i].1 = spans[i + 1].1;
                spans.remove(i + 1);
                i = i.saturating_sub(1);
            } else {
                i += 1;
            }
        }
    }

    fn merge_by_rank(&self, word: &str, spans: &mut Vec<(usize, usize)>) {
        loop {
            let best = (0..spans.len().saturating_sub(1))
                .filter_map(|i| {
                    self.vocab
                        .rank(&word[spans[i].0..spans[i + 1].1])
                        .map(|r| (r, i))
                })
                .min();
            match best {
                Some((_, i)) => {
                    spans[i].1 = spans[i + 1].1;
                    spans.remove(i + 1);
                }
                None => break,
            }
        }
    }

    pub fn encode_word(&self, word: &str) -> EncodedWord {
        let owned;
        let word = match self.marker {
            Some(m) => {
                owned = format!("{word}{m}");
                owned.as_str()
            }
            None => word,
        };
        let spans = self.segment_spans(word);
        let mut tokens = Vec::with_capacity(spans.len());
        let mut oov = Vec::with_capacity(spans.len());
        for (s, e) in spans {
            let tok = &word[s..e];
            oov.push(!self.vocab.contains(tok));
            tokens.push(tok.to_string());
        }
        EncodedWord { tokens, oov }
    }

    /// Splits `text` on whitespace and encodes each word.
    pub fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence {
            words: text.split_whitespace().map(|w| self.encode_word(w)).collect(),
        }
    }
}

/// Concatenates each word's tokens and joins words with single spaces,
/// stripping a trailing `marker` from each word when given.
pub fn decode(tokens: &TokenSequence, marker: Option<&str>) -> String {
    let mut out = String::new();
    for (i, w) in tokens.words.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let word: String = w.tokens.concat();
        match marker.and_then(|m| word.strip_suffix(m)) {
            Some(stripped) => out.push_str(stripped),
            None => out.push_str(&word),
        }
    }
    out
}

/// Decodes one line of space-separated tokens where word boundaries are
/// marked by `marker`; without a marker every token is its own word.
pub fn decode_line(line: &str, marker: Option<&str>) -> String {
    match marker {
        None => line.split_whitespace().collect::<Vec<_>>().join(" "),
        Some(m) => {
            let joined: String = line.split_whitespace().collect();
            joined
                .split(m)
                .filter(|w| !w.is_empty())
                .collect::<Vec<_>>()
                .join(" ")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(tokens.iter().copied()).unwrap()
    }

    // Literal restart-from-the-left loop, kept as an oracle for the resuming scan.
    fn naive_leftmost(word: &str, v: &Vocabulary) -> Vec<String> {
        let mut toks: Vec<String> = word.chars().map(String::from).collect();
        'outer: loop {
            for i in 0..toks.len().saturating_sub(1) {
                let cat = format!("{}{}", toks[i], toks[i + 1]);
                if v.contains(&cat) {
                    toks[i] = cat;
                    toks.remove(i + 1);
                    continue 'outer;
                }
            }
            return toks;
        }
    }

    #[test]
    fn aba_merges_once() {
        let v = vocab(&["a", "b", "ab"]);
        let seg = Segmenter::new(&v, MergeOrder::Leftmost);
        let w = seg.encode_word("aba");
        assert_eq!(w.tokens, ["ab", "a"]);
        assert_eq!(w.oov, [false, false]);
        assert_eq!(naive_leftmost("aba", &v), ["ab", "a"]);
    }

    #[test]
    fn identity_and_oov() {
        let v = vocab(&["a"]);
        let seg = Segmenter::new(&v, MergeOrder::Leftmost);
        assert_eq!(seg.encode_word("a").tokens, ["a"]);
        let w = seg.encode_word("xy");
        assert_eq!(w.tokens, ["x", "y"]);
        assert_eq!(w.oov, [true, true]);
    }

    #[test]
    fn leftmost_and_rank_orders_can_differ() {
        // "abc": leftmost merges "ab" first, rank order prefers "bc"
        let v = vocab(&["bc", "ab", "a", "b", "c"]);
        let left = Segmenter::new(&v, MergeOrder::Leftmost).encode_word("abc");
        let rank = Segmenter::new(&v, MergeOrder::BpeRank).encode_word("abc");
        assert_eq!(left.tokens, ["ab", "c"]);
        assert_eq!(rank.tokens, ["a", "bc"]);
    }

    #[test]
    fn decode_joins_words() {
        let seq = TokenSequence {
            words: vec![EncodedWord {
                tokens: vec!["ab".into(), "a".into()],
                oov: vec![false, false],
            }],
        };
        assert_eq!(decode(&seq, None), "aba");
        let seq = TokenSequence {
            words: vec![
                EncodedWord { tokens: vec!["a".into()], oov: vec![false] },
                EncodedWord { tokens: vec!["b".into()], oov: vec![false] },
            ],
        };
        assert_eq!(decode(&seq, None), "a b");
    }

    #[test]
    fn marker_round_trip() {
        let v = vocab(&["a", "b", "_", "a_", "ab", "ab_"]);
        let seg = Segmenter::new(&v, MergeOrder::Leftmost).with_marker(Some("_"));
        let enc = seg.encode("ab  a");
        assert_eq!(enc.words[0].tokens, ["ab_"]);
        assert_eq!(decode(&enc, Some("_")), "ab a");
        assert_eq!(decode_line(&enc.render(None), Some("_")), "ab a");
    }

    #[test]
    fn render_substitutes_unk() {
        let v = vocab(&["a"]);
        let enc = Segmenter::new(&v, MergeOrder::Leftmost).encode("ax a");
        assert_eq!(enc.render(None), "a x a");
        assert_eq!(enc.render(Some("<unk>")), "a <unk> a");
        assert_eq!(enc.oov_count(), 1);
    }

    proptest! {
        #[test]
        fn resuming_scan_matches_restart_oracle(
            word in "[abc]{1,12}",
            extra in proptest::collection::vec("[abc]{2,4}", 0..8),
        ) {
            let mut toks = vec!["a".to_string(), "b".to_string(), "c".to_string()];
            for e in extra {
                if !toks.contains(&e) {
                    toks.push(e);
                }
            }
            let v = Vocabulary::from_tokens(toks).unwrap();
            let seg = Segmenter::new(&v, MergeOrder::Leftmost);
            prop_assert_eq!(seg.encode_word(&word).tokens, naive_leftmost(&word, &v));
        }

        #[test]
        fn encoding_is_lossless_and_bounded(
            text in "[abcé ]{0,40}",
            extra in proptest::collection::vec("[abcé]{2,3}", 0..6),
            rank in any::<bool>(),
        ) {
            let mut toks = vec!["a".to_string(), "b".to_string()];
            for e in extra {
                if !toks.contains(&e) {
                    toks.push(e);
                }
            }
            let v = Vocabulary::from_tokens(toks).unwrap();
            let order = if rank { MergeOrder::BpeRank } else { MergeOrder::Leftmost };
            let enc = Segmenter::new(&v, order).encode(&text);
            let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(decode(&enc, None), normalized);
            for (w, word) in enc.words.iter().zip(text.split_whitespace()) {
                prop_assert!(w.tokens.len() <= word.chars().count());
                for (t, &oov) in w.tokens.iter().zip(&w.oov) {
                    prop_assert_eq!(oov, !v.contains(t));
                    if oov {
                        prop_assert_eq!(t.chars().count(), 1);
                    }
                }
            }
        }
    }
}
