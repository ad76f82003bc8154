//! BPE training and the frequency-ranked candidate list built from it.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::rc::Rc;

use log::debug;

use crate::corpus::{parse_tsv, write_tsv, WordSequence};
use crate::error::{Result, VoltError};
use crate::vocab::{Provenance, Strategy, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeRule {
    pub left: String,
    pub right: String,
    pub merged: String,
    pub rank: usize,
}

/// One candidate token with its count in the final BPE segmentation state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub token: String,
    pub count: u64,
    /// Rank of the rule that first produced the token; `None` for characters
    /// and for candidates read back from a file.
    pub origin: Option<usize>,
}

impl Candidate {
    pub fn is_char(&self) -> bool {
        let mut it = self.token.chars();
        it.next().is_some() && it.next().is_none()
    }
}

/// Candidates in canonical order plus the merge rules that produced them.
///
/// Canonical order: descending count, then creating-rule rank (characters
/// first), then token string.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CandidateList {
    tokens: Vec<Candidate>,
    merge_rules: Vec<MergeRule>,
}

fn canonical_cmp(a: &Candidate, b: &Candidate) -> Ordering {
    let rank_key = |c: &Candidate| c.origin.map_or(0, |r| r + 1);
    b.count
        .cmp(&a.count)
        .then_with(|| rank_key(a).cmp(&rank_key(b)))
        .then_with(|| a.token.cmp(&b.token))
}

impl CandidateList {
    /// Sorts `tokens` canonically. Duplicate tokens are rejected.
    pub fn new(mut tokens: Vec<Candidate>, merge_rules: Vec<MergeRule>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &tokens {
            if c.token.is_empty() || !seen.insert(c.token.as_str()) {
                return Err(VoltError::InconsistentInputs(format!(
                    "candidate {:?} is empty or duplicated",
                    c.token
                )));
            }
        }
        tokens.sort_by(canonical_cmp);
        Ok(CandidateList { tokens, merge_rules })
    }

    /// Keeps the given order as-is (used for lists read from disk).
    pub fn from_ordered(tokens: Vec<(String, u64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(tokens.len());
        for (token, count) in tokens {
            if token.is_empty() || token.chars().any(char::is_whitespace) || !seen.insert(token.clone()) {
                return Err(VoltError::InconsistentInputs(format!(
                    "candidate {token:?} is empty, contains whitespace, or is duplicated"
                )));
            }
            out.push(Candidate {
                token,
                count,
                origin: None,
            });
        }
        Ok(CandidateList {
            tokens: out,
            merge_rules: Vec::new(),
        })
    }

    pub fn tokens(&self) -> &[Candidate] {
        &self.tokens
    }

    pub fn merge_rules(&self) -> &[MergeRule] {
        &self.merge_rules
    }

    pub fn with_merge_rules(mut self, rules: Vec<MergeRule>) -> Self {
        self.merge_rules = rules;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Single-character candidates in list order.
    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.tokens
            .iter()
            .filter(|c| c.is_char())
            .filter_map(|c| c.token.chars().next())
    }

    pub fn to_tsv(&self) -> String {
        write_tsv(self.tokens.iter().map(|c| (c.token.as_str(), c.count)))
    }

    pub fn from_tsv(origin: &str, text: &str) -> Result<Self> {
        CandidateList::from_ordered(parse_tsv(origin, text)?)
    }

    /// `left right` per line, in rank order.
    pub fn merges_text(&self) -> String {
        let mut out = String::new();
        for r in &self.merge_rules {
            let _ = writeln!(out, "{} {}", r.left, r.right);
        }
        out
    }

    /// Applies the merge rules BPE-style: the lowest-ranked adjacent pair is
    /// merged everywhere in the word, left to right, until no rule applies.
    pub fn apply_merges(&self, word: &str) -> Vec<String> {
        let ranks: HashMap<(&str, &str), usize> = self
            .merge_rules
            .iter()
            .map(|r| ((r.left.as_str(), r.right.as_str()), r.rank))
            .collect();
        apply_ranked_merges(word, &ranks)
    }

    /// All characters plus merged tokens in rule order, stopping once the
    /// vocabulary holds `size` distinct tokens. `None` when `size` is smaller
    /// than the character set or larger than the rules can reach.
    pub fn bpe_vocabulary(&self, size: usize) -> Option<Vocabulary> {
        let mut tokens: Vec<String> = self.chars().map(String::from).collect();
        if size < tokens.len() {
            return None;
        }
        let mut seen: HashSet<String> = tokens.iter().cloned().collect();
        for r in &self.merge_rules {
            if tokens.len() >= size {
                break;
            }
            if seen.insert(r.merged.clone()) {
                tokens.push(r.merged.clone());
            }
        }
        if tokens.len() < size {
            return None;
        }
        let vocab = Vocabulary::from_tokens(tokens).ok()?;
        Some(vocab.with_provenance(Provenance {
            strategy: Strategy::Bpe,
            timestep: None,
            size: Some(size),
            config_digest: None,
        }))
    }
}

pub(crate) fn apply_ranked_merges(word: &str, ranks: &HashMap<(&str, &str), usize>) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    loop {
        let best = syms
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| ranks.get(&(w[0].as_str(), w[1].as_str())).map(|&r| (r, i)))
            .min();
        let Some((_, at)) = best else { break };
        let (left, right) = (syms[at].clone(), syms[at + 1].clone());
        let mut out = Vec::with_capacity(syms.len());
        let mut i = 0;
        while i < syms.len() {
            if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                out.push(format!("{left}{right}"));
                i += 2;
            } else {
                out.push(std::mem::take(&mut syms[i]));
                i += 1;
            }
        }
        syms = out;
    }
    syms
}

/// Parses a merges file (`left right` per line). A leading `#version` line is skipped.
pub fn parse_merges(origin: &str, text: &str) -> Result<Vec<MergeRule>> {
    let mut rules = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() || (n == 0 && line.starts_with("#version")) {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                rules.push(MergeRule {
                    left: l.to_string(),
                    right: r.to_string(),
                    merged: format!("{l}{r}"),
                    rank: rules.len(),
                });
            }
            _ => {
                return Err(VoltError::Parse {
                    origin: origin.to_string(),
                    line: n + 1,
                    message: "expected `left right`".into(),
                })
            }
        }
    }
    Ok(rules)
}

/// Top `n` candidates with every character forced in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopCandidates {
    pub candidates: CandidateList,
    /// `n` exceeded the list length; everything was returned.
    pub truncated: bool,
    /// Characters that were outside the prefix and had to be added.
    pub forced: Vec<String>,
}

/// Canonical prefix of length `n`, with all characters force-included.
///
/// Forced characters displace the lowest-ranked multi-character tokens of
/// the prefix so the result never exceeds `n` entries, unless `n` is smaller
/// than the character set itself, in which case exactly the characters are
/// returned.
pub fn top_candidates(candidates: &CandidateList, n: usize) -> Result<TopCandidates> {
    if n == 0 {
        return Err(VoltError::InvalidSize("candidate budget must be positive".into()));
    }
    let all = candidates.tokens();
    if n >= all.len() {
        return Ok(TopCandidates {
            candidates: candidates.clone(),
            truncated: n > all.len(),
            forced: Vec::new(),
        });
    }
    let mut keep = vec![false; all.len()];
    keep[..n].iter_mut().for_each(|k| *k = true);
    let forced: Vec<usize> = (n..all.len()).filter(|&i| all[i].is_char()).collect();
    let n_chars = all.iter().filter(|c| c.is_char()).count();
    if n < n_chars {
        keep.iter_mut().zip(all).for_each(|(k, c)| *k = c.is_char());
    } else {
        let mut evict = forced.len();
        for i in (0..n).rev() {
            if evict == 0 {
                break;
            }
            if !all[i].is_char() {
                keep[i] = false;
                evict -= 1;
            }
        }
        for &i in &forced {
            keep[i] = true;
        }
    }
    let tokens = all
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(c, _)| c.clone())
        .collect();
    Ok(TopCandidates {
        candidates: CandidateList {
            tokens,
            merge_rules: candidates.merge_rules.clone(),
        },
        truncated: false,
        forced: forced.iter().map(|&i| all[i].token.clone()).collect(),
    })
}

#[derive(PartialEq, Eq)]
struct HeapEntry {
    count: i64,
    left: Rc<str>,
    right: Rc<str>,
    pair: (u32, u32),
}

impl Ord for HeapEntry {
    // Max count first; among equal counts the lexicographically smallest
    // (left, right) wins.
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Default)]
struct Interner {
    strings: Vec<Rc<str>>,
    ids: HashMap<Rc<str>, u32>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.strings.len() as u32;
        let rc: Rc<str> = Rc::from(s);
        self.strings.push(rc.clone());
        self.ids.insert(rc, id);
        id
    }
}

type Pair = (u32, u32);

/// Standard BPE training: repeatedly merge the most frequent adjacent pair.
///
/// Stops after `num_merges` rules or once no pair occurs at least twice.
/// Candidate counts come from the final segmentation state.
pub fn learn_bpe(words: &WordSequence, num_merges: usize) -> Result<CandidateList> {
    if num_merges == 0 {
        return Err(VoltError::InvalidSize("num_merges must be at least 1".into()));
    }
    if words.is_empty() {
        return Err(VoltError::EmptyCorpus);
    }

    let mut interner = Interner::default();
    let mut seqs: Vec<Vec<u32>> = Vec::with_capacity(words.len());
    let counts: Vec<i64> = words.iter().map(|(_, c)| c as i64).collect();
    let mut buf = [0u8; 4];
    for (w, _) in words.iter() {
        seqs.push(w.chars().map(|c| interner.intern(c.encode_utf8(&mut buf))).collect());
    }
    let n_chars = interner.strings.len();

    let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
    let mut where_: HashMap<Pair, Vec<u32>> = HashMap::new();
    for (wi, seq) in seqs.iter().enumerate() {
        for p in seq.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_insert(0) += counts[wi];
            let list = where_.entry(pair).or_default();
            if list.last() != Some(&(wi as u32)) {
                list.push(wi as u32);
            }
        }
    }

    let entry = |interner: &Interner, pair: Pair, count: i64| HeapEntry {
        count,
        left: interner.strings[pair.0 as usize].clone(),
        right: interner.strings[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<HeapEntry> = pair_counts
        .iter()
        .map(|(&p, &c)| entry(&interner, p, c))
        .collect();

    let mut rules: Vec<MergeRule> = Vec::new();
    let mut origin: HashMap<u32, usize> = HashMap::new();
    let mut stamp = vec![u32::MAX; seqs.len()];
    let mut delta: HashMap<Pair, i64> = HashMap::new();

    while rules.len() < num_merges {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            continue;
        }
        if current < 2 {
            break;
        }
        let (a, b) = top.pair;
        let merged_str = format!("{}{}", top.left, top.right);
        let merged = interner.intern(&merged_str);
        let rank = rules.len();
        origin.entry(merged).or_insert(rank);
        rules.push(MergeRule {
            left: top.left.to_string(),
            right: top.right.to_string(),
            merged: merged_str,
            rank,
        });

        delta.clear();
        let affected = where_.remove(&top.pair).unwrap_or_default();
        for wi in affected {
            let wi_us = wi as usize;
            if stamp[wi_us] == rank as u32 {
                continue;
            }
            stamp[wi_us] = rank as u32;
            let seq = &seqs[wi_us];
            if !seq.windows(2).any(|p| p[0] == a && p[1] == b) {
                continue;
            }
            let c = counts[wi_us];
            for p in seq.windows(2) {
                *delta.entry((p[0], p[1])).or_insert(0) -= c;
            }
            let mut next = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == a && seq[i + 1] == b {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(seq[i]);
                    i += 1;
                }
            }
            for p in next.windows(2) {
                let pair = (p[0], p[1]);
                *delta.entry(pair).or_insert(0) += c;
                if p[0] == merged || p[1] == merged {
                    let list = where_.entry(pair).or_default();
                    if list.last() != Some(&wi) {
                        list.push(wi);
                    }
                }
            }
            seqs[wi_us] = next;
        }
        for (&pair, &d) in delta.iter() {
            if d == 0 {
                continue;
            }
            let c = pair_counts.entry(pair).or_insert(0);
            *c += d;
            let c = *c;
            if c <= 0 {
                pair_counts.remove(&pair);
            } else {
                heap.push(entry(&interner, pair, c));
            }
        }
    }
    debug!("bpe: {} merges over {} distinct words", rules.len(), seqs.len());

    let mut final_counts = vec![0u64; interner.strings.len()];
    for (seq, &c) in seqs.iter().zip(&counts) {
        for &s in seq {
            final_counts[s as usize] += c as u64;
        }
    }
    let mut tokens = Vec::with_capacity(interner.strings.len());
    for (id, s) in interner.strings.iter().enumerate() {
        let id32 = id as u32;
        if id >= n_chars && !origin.contains_key(&id32) {
            continue;
        }
        tokens.push(Candidate {
            token: s.to_string(),
            count: final_counts[id],
            origin: origin.get(&id32).copied(),
        });
    }
    CandidateList::new(tokens, rules)
}
