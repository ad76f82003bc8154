//! Test corpora: deterministic synthetic text plus one bundled English
//! novel (see `data/NOTICE`).
//!
//! Word frequencies follow a Zipf law over a generated lexicon. Lexicon
//! entries are built from syllables with a small set of shared prefixes and
//! suffixes, so subword structure is rich enough for BPE to find real merges.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

/// Path of the bundled "Moby-Dick" text (about 1.2 MB of English prose).
pub fn moby_dick_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/moby-dick.txt")
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
    "br", "ch", "cl", "dr", "fl", "gr", "pl", "pr", "sh", "st", "th", "tr", "",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ee", "ou", "oo", "y"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "t", "l", "m", "nd", "st", "ng", "ck"];
const PREFIXES: &[&str] = &["un", "re", "pre", "dis", "over", "in"];
const SUFFIXES: &[&str] = &["s", "ed", "ing", "er", "ly", "tion", "ness", "ment", "able", "est"];
const PUNCT: &[&str] = &[",", ".", ";", "?", "!"];

/// Builder for a Zipfian pseudo-natural-language corpus.
#[derive(Debug, Clone)]
pub struct ZipfCorpus {
    seed: u64,
    lexicon_size: usize,
    exponent: f64,
    words_per_line: (usize, usize),
    punctuation: bool,
}

impl ZipfCorpus {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            lexicon_size: 20_000,
            exponent: 1.07,
            words_per_line: (6, 24),
            punctuation: true,
        }
    }

    pub fn lexicon_size(mut self, n: usize) -> Self {
        assert!(n > 0, "lexicon must be non-empty");
        self.lexicon_size = n;
        self
    }

    pub fn exponent(mut self, s: f64) -> Self {
        self.exponent = s;
        self
    }

    pub fn words_per_line(mut self, min: usize, max: usize) -> Self {
        assert!(min >= 1 && min <= max);
        self.words_per_line = (min, max);
        self
    }

    pub fn punctuation(mut self, on: bool) -> Self {
        self.punctuation = on;
        self
    }

    /// The generated lexicon, most frequent word first.
    pub fn lexicon(&self) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(self.lexicon_size);
        while out.len() < self.lexicon_size {
            let w = make_word(&mut rng);
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    }

    /// Exactly `n_lines` lines of text, without trailing newlines.
    pub fn lines(&self, n_lines: usize) -> Vec<String> {
        let mut gen = self.generator();
        (0..n_lines).map(|_| gen.next_line()).collect()
    }

    /// Whole lines, newline-terminated, until at least `target_bytes` bytes.
    pub fn text(&self, target_bytes: usize) -> String {
        let mut gen = self.generator();
        let mut out = String::with_capacity(target_bytes + 256);
        while out.len() < target_bytes {
            out.push_str(&gen.next_line());
            out.push('\n');
        }
        out
    }

    /// `n` bare words drawn from the Zipf law, no punctuation.
    pub fn words(&self, n: usize) -> Vec<String> {
        let mut gen = self.generator();
        (0..n).map(|_| gen.next_word().to_string()).collect()
    }

    fn generator(&self) -> LineGenerator {
        LineGenerator {
            lexicon: self.lexicon(),
            zipf: Zipf::new(self.lexicon_size as f64, self.exponent).expect("valid zipf parameters"),
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            words_per_line: self.words_per_line,
            punctuation: self.punctuation,
        }
    }
}

struct LineGenerator {
    lexicon: Vec<String>,
    zipf: Zipf<f64>,
    rng: ChaCha8Rng,
    words_per_line: (usize, usize),
    punctuation: bool,
}

impl LineGenerator {
    fn next_word(&mut self) -> &str {
        let rank = self.zipf.sample(&mut self.rng) as usize;
        &self.lexicon[rank.clamp(1, self.lexicon.len()) - 1]
    }

    fn next_line(&mut self) -> String {
        let (lo, hi) = self.words_per_line;
        let n = self.rng.random_range(lo..=hi);
        let mut line = String::new();
        for i in 0..n {
            if i > 0 {
                line.push(' ');
            }
            let w = self.next_word().to_string();
            line.push_str(&w);
            if self.punctuation && i + 1 < n && self.rng.random_bool(0.08) {
                line.push_str(PUNCT[0]);
            }
        }
        if self.punctuation {
            line.push_str(PUNCT.choose(&mut self.rng).copied().unwrap_or("."));
        }
        line
    }
}

fn make_word(rng: &mut ChaCha8Rng) -> String {
    let mut w = String::new();
    if rng.random_bool(0.15) {
        w.push_str(PREFIXES.choose(rng).unwrap());
    }
    let syllables = match rng.random_range(0..10) {
        0..=3 => 1,
        4..=7 => 2,
        _ => 3,
    };
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(NUCLEI.choose(rng).unwrap());
        w.push_str(CODAS.choose(rng).unwrap());
    }
    if rng.random_bool(0.35) {
        w.push_str(SUFFIXES.choose(rng).unwrap());
    }
    w
}
