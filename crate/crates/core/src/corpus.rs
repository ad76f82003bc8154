//! Corpus ingestion and frequency statistics.
//!
//! Everything downstream derives its probabilities from the tables built
//! here: characters are Unicode scalar values, words are maximal runs of
//! non-whitespace, and word counts are aggregated before any segmentation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, VoltError};
use crate::segmenter::Segmenter;

/// Lines of text with provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCorpus {
    lines: Vec<String>,
    byte_count: usize,
    source_id: String,
}

impl RawCorpus {
    /// Splits `text` into lines. Bytes are counted including line terminators.
    pub fn from_text(source_id: impl Into<String>, text: &str) -> Self {
        Self::from_text_capped(source_id, text, None)
    }

    fn from_text_capped(source_id: impl Into<String>, text: &str, max_bytes: Option<usize>) -> Self {
        let mut lines = Vec::new();
        let mut byte_count = 0usize;
        for piece in text.split_inclusive('\n') {
            if let Some(cap) = max_bytes {
                if byte_count + piece.len() > cap {
                    break;
                }
            }
            byte_count += piece.len();
            let line = piece.strip_suffix('\n').unwrap_or(piece);
            let line = line.strip_suffix('\r').unwrap_or(line);
            lines.push(line.to_string());
        }
        RawCorpus {
            lines,
            byte_count,
            source_id: source_id.into(),
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn byte_count(&self) -> usize {
        self.byte_count
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Appends another corpus; the source id becomes a `+`-joined list.
    pub fn extend(&mut self, other: RawCorpus) {
        self.lines.extend(other.lines);
        self.byte_count += other.byte_count;
        if !other.source_id.is_empty() {
            if !self.source_id.is_empty() {
                self.source_id.push('+');
            }
            self.source_id.push_str(&other.source_id);
        }
    }
}

/// Reads a UTF-8 text file. Invalid sequences become U+FFFD.
///
/// With `max_bytes`, reading stops at the last complete line that fits in the
/// cap (byte counts include line terminators).
pub fn load_corpus(path: impl AsRef<Path>, max_bytes: Option<usize>) -> Result<RawCorpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| VoltError::io(path, e))?;
    if bytes.is_empty() {
        return Err(VoltError::EmptyCorpus);
    }
    let text = String::from_utf8_lossy(&bytes);
    let corpus = RawCorpus::from_text_capped(path.display().to_string(), &text, max_bytes);
    if corpus.is_empty() {
        return Err(VoltError::EmptyCorpus);
    }
    Ok(corpus)
}

/// Loads and concatenates several files in the given order. The byte cap
/// applies to the concatenation.
pub fn load_corpora<P: AsRef<Path>>(paths: &[P], max_bytes: Option<usize>) -> Result<RawCorpus> {
    let mut out: Option<RawCorpus> = None;
    let mut remaining = max_bytes;
    for path in paths {
        if remaining == Some(0) {
            break;
        }
        let next = match load_corpus(path, remaining) {
            Ok(c) => c,
            // a file that does not fit under the remaining cap just ends the read
            Err(VoltError::EmptyCorpus) if out.is_some() && remaining.is_some() => break,
            Err(e) => return Err(e),
        };
        if let Some(r) = remaining.as_mut() {
            *r -= next.byte_count();
        }
        match out.as_mut() {
            Some(acc) => acc.extend(next),
            None => out = Some(next),
        }
    }
    out.ok_or(VoltError::EmptyCorpus)
}

/// Distinct words with occurrence counts, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSequence {
    words: Vec<(String, u64)>,
}

impl WordSequence {
    /// Builds a sequence from explicit counts; repeated words are merged.
    pub fn from_counts<I, S>(counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut builder = WordCounter::default();
        for (word, count) in counts {
            let word = word.into();
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(VoltError::InconsistentInputs(format!(
                    "word {word:?} is empty or contains whitespace"
                )));
            }
            if count > 0 {
                builder.add(&word, count);
            }
        }
        builder.finish()
    }

    pub fn words(&self) -> &[(String, u64)] {
        &self.words
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words.iter().map(|(w, c)| (w.as_str(), *c))
    }

    /// Number of distinct words.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Total whitespace-delimited occurrences.
    pub fn total_occurrences(&self) -> u64 {
        self.words.iter().map(|(_, c)| c).sum()
    }

    /// Σ chars(word) × count.
    pub fn total_chars(&self) -> u64 {
        self.words
            .iter()
            .map(|(w, c)| w.chars().count() as u64 * c)
            .sum()
    }

    /// Multiplies every count by `factor`.
    pub fn scaled(&self, factor: u64) -> Self {
        assert!(factor > 0);
        WordSequence {
            words: self.words.iter().map(|(w, c)| (w.clone(), c * factor)).collect(),
        }
    }
}

#[derive(Default)]
struct WordCounter {
    index: HashMap<String, usize>,
    words: Vec<(String, u64)>,
}

impl WordCounter {
    fn add(&mut self, word: &str, count: u64) {
        match self.index.get(word) {
            Some(&i) => self.words[i].1 += count,
            None => {
                self.index.insert(word.to_string(), self.words.len());
                self.words.push((word.to_string(), count));
            }
        }
    }

    fn finish(self) -> Result<WordSequence> {
        if self.words.is_empty() {
            return Err(VoltError::EmptyCorpus);
        }
        Ok(WordSequence { words: self.words })
    }
}

/// Splits on Unicode whitespace and aggregates counts.
pub fn pre_tokenize(corpus: &RawCorpus) -> Result<WordSequence> {
    pre_tokenize_with_marker(corpus, None)
}

/// Like [`pre_tokenize`], appending `marker` to every word when given.
pub fn pre_tokenize_with_marker(corpus: &RawCorpus, marker: Option<&str>) -> Result<WordSequence> {
    if let Some(m) = marker {
        if m.is_empty() || m.chars().any(char::is_whitespace) {
            return Err(VoltError::InvalidConfig(
                "word boundary marker must be non-empty and contain no whitespace".into(),
            ));
        }
    }
    let mut counter = WordCounter::default();
    let mut buf = String::new();
    for line in corpus.lines() {
        for word in line.split_whitespace() {
            match marker {
                Some(m) => {
                    buf.clear();
                    buf.push_str(word);
                    buf.push_str(m);
                    counter.add(&buf, 1);
                }
                None => counter.add(word, 1),
            }
        }
    }
    counter.finish()
}

/// Character counts, ordered by code point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharTable {
    entries: BTreeMap<char, u64>,
    total: u64,
}

impl CharTable {
    pub fn entries(&self) -> &BTreeMap<char, u64> {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, c: char) -> u64 {
        self.entries.get(&c).copied().unwrap_or(0)
    }

    pub fn contains(&self, c: char) -> bool {
        self.entries.contains_key(&c)
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.entries.keys().copied()
    }

    /// P(i) in code-point order.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total as f64;
        self.entries.values().map(|&c| c as f64 / total).collect()
    }
}

/// Per-character counts weighted by word counts.
pub fn count_chars(words: &WordSequence) -> CharTable {
    let mut entries = BTreeMap::new();
    let mut total = 0u64;
    for (word, count) in words.iter() {
        for ch in word.chars() {
            *entries.entry(ch).or_insert(0) += count;
            total += count;
        }
    }
    CharTable { entries, total }
}

/// Token counts; every stored count is positive.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrequencyTable {
    entries: BTreeMap<String, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut entries = BTreeMap::new();
        let mut total = 0;
        for (tok, c) in counts {
            if c > 0 {
                *entries.entry(tok.into()).or_insert(0) += c;
                total += c;
            }
        }
        FrequencyTable { entries, total }
    }

    pub fn entries(&self) -> &BTreeMap<String, u64> {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, token: &str) -> u64 {
        self.entries.get(token).copied().unwrap_or(0)
    }

    pub fn probability(&self, token: &str) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.count(token) as f64 / self.total as f64
    }

    /// Entries by descending count, ties broken lexicographically.
    pub fn sorted(&self) -> Vec<(&str, u64)> {
        let mut rows: Vec<(&str, u64)> = self.entries.iter().map(|(t, &c)| (t.as_str(), c)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        rows
    }

    /// `token<TAB>count` lines in [`FrequencyTable::sorted`] order.
    pub fn to_tsv(&self) -> String {
        write_tsv(self.sorted())
    }
}

pub(crate) fn write_tsv<'a>(rows: impl IntoIterator<Item = (&'a str, u64)>) -> String {
    let mut out = String::new();
    for (tok, count) in rows {
        let _ = writeln!(out, "{tok}\t{count}");
    }
    out
}

/// Parses `token<TAB>count` lines, preserving file order.
pub fn parse_tsv(origin: &str, text: &str) -> Result<Vec<(String, u64)>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| VoltError::Parse {
            origin: origin.to_string(),
            line: n + 1,
            message,
        };
        let (tok, count) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected token<TAB>count".into()))?;
        if tok.is_empty() {
            return Err(parse_err("empty token".into()));
        }
        let count = count
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(format!("bad count {count:?}: {e}")))?;
        rows.push((tok.to_string(), count));
    }
    Ok(rows)
}

/// Segments every distinct word once and aggregates token counts.
pub fn count_tokens(words: &WordSequence, segmenter: &Segmenter<'_>) -> FrequencyTable {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for (word, count) in words.iter() {
        for (start, end) in segmenter.segment_spans(word) {
            *counts.entry(&word[start..end]).or_insert(0) += count;
        }
    }
    FrequencyTable::from_counts(counts)
}
