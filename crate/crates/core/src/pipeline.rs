//! The VOLT outer loop and the MUV-Search baseline.
//!
//! For every budget `S[t]` of the schedule the top candidates are turned into
//! one transport instance, the solved plan is filtered into a vocabulary and
//! that vocabulary's entropy is measured by re-segmenting the corpus.
//! Consecutive entropies give a MUV per timestep and the best one wins.

use std::time::{Duration, Instant};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bpe::{learn_bpe, top_candidates, CandidateList};
use crate::corpus::{count_chars, count_tokens, WordSequence};
use crate::entropy::{corpus_entropy_with, muv, EntropyReport, SizedEntropy};
use crate::error::{Result, VoltError};
use crate::ot::{extract_vocabulary, sinkhorn, DistanceMatrix, SinkhornConfig, TransportPlan, DEFAULT_MASS_THRESHOLD};
use crate::segmenter::{MergeOrder, Segmenter};
use crate::vocab::{Provenance, Strategy, Vocabulary};

/// Strictly increasing size budgets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepSchedule {
    sizes: Vec<usize>,
    /// Common difference when the schedule is arithmetic.
    interval: Option<usize>,
}

impl TimestepSchedule {
    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(VoltError::InvalidSchedule("schedule is empty".into()));
        }
        if sizes[0] == 0 {
            return Err(VoltError::InvalidSchedule("sizes must be positive".into()));
        }
        if sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(VoltError::InvalidSchedule("sizes must be strictly increasing".into()));
        }
        let interval = match sizes.len() {
            1 => None,
            _ => {
                let k = sizes[1] - sizes[0];
                sizes.windows(2).all(|w| w[1] - w[0] == k).then_some(k)
            }
        };
        Ok(TimestepSchedule { sizes, interval })
    }

    /// `start, start + step, ...` up to and including `stop`.
    pub fn arithmetic(start: usize, stop: usize, step: usize) -> Result<Self> {
        if step == 0 || start == 0 || stop < start {
            return Err(VoltError::InvalidSchedule(format!("bad range {start}:{stop}:{step}")));
        }
        Self::from_sizes((start..=stop).step_by(step).collect())
    }

    /// Parses `start:stop:step` or a comma-separated list.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || VoltError::InvalidSchedule(format!("cannot parse {text:?}"));
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
        if text.contains(':') {
            let parts: Vec<&str> = text.split(':').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            Self::arithmetic(num(parts[0])?, num(parts[1])?, num(parts[2])?)
        } else {
            Self::from_sizes(text.split(',').map(num).collect::<Result<_>>()?)
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn interval(&self) -> Option<usize> {
        self.interval
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

impl Default for TimestepSchedule {
    /// 1K..10K in steps of 1K.
    fn default() -> Self {
        TimestepSchedule::arithmetic(1000, 10_000, 1000).expect("valid default schedule")
    }
}

/// Default MUV-Search sizes: 1K..10K and 20K.
pub fn default_search_sizes() -> Vec<usize> {
    let mut v: Vec<usize> = (1..=10).map(|k| k * 1000).collect();
    v.push(20_000);
    v
}

/// How the winning timestep is chosen from the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Largest MUV, i.e. the steepest entropy drop per added token.
    #[default]
    MaxMuv,
    /// Largest `(H_t - H_{t-1}) / k`, the bound read with its printed sign.
    LiteralEq3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltConfig {
    pub sinkhorn: SinkhornConfig,
    pub selection: SelectionRule,
    pub merge_order: MergeOrder,
    pub mass_threshold: f64,
    /// Timesteps solved concurrently; 1 runs them in order on this thread.
    pub jobs: usize,
}

impl Default for VoltConfig {
    fn default() -> Self {
        VoltConfig {
            sinkhorn: SinkhornConfig::default(),
            selection: SelectionRule::MaxMuv,
            merge_order: MergeOrder::Leftmost,
            mass_threshold: DEFAULT_MASS_THRESHOLD,
            jobs: 1,
        }
    }
}

/// One schedule element of a VOLT run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepRecord {
    pub candidate_size: usize,
    /// Tokens with nonzero frequency that entered the transport instance.
    pub instance_tokens: usize,
    pub vocab_size: usize,
    pub entropy_nats: Option<f64>,
    pub muv: Option<f64>,
    pub sinkhorn_iterations: usize,
    pub converged: bool,
    pub marginal_violation: f64,
    pub log_domain: bool,
    pub all_filtered: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub vocabulary: Option<Vocabulary>,
    #[serde(skip)]
    pub entropy: Option<EntropyReport>,
    #[serde(skip)]
    pub plan: Option<(DistanceMatrix, TransportPlan)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub solve: Duration,
    pub select: Duration,
}

#[derive(Debug, Clone)]
pub struct VoltReport {
    pub schedule: TimestepSchedule,
    pub trace: Vec<TimestepRecord>,
    pub selected_timestep: usize,
    pub selected_vocabulary: Vocabulary,
    pub timings: PhaseTimings,
}

impl VoltReport {
    pub fn selected(&self) -> &TimestepRecord {
        &self.trace[self.selected_timestep]
    }
}

/// Runs VOLT over `words` with a frequency-ranked candidate list.
pub fn run_volt(
    words: &WordSequence,
    candidates: &CandidateList,
    schedule: &TimestepSchedule,
    config: &VoltConfig,
) -> Result<VoltReport> {
    run_volt_with(words, candidates, schedule, config, false)
}

/// Like [`run_volt`]; with `keep_plans` every record retains its solved plan.
pub fn run_volt_with(
    words: &WordSequence,
    candidates: &CandidateList,
    schedule: &TimestepSchedule,
    config: &VoltConfig,
    keep_plans: bool,
) -> Result<VoltReport> {
    config.sinkhorn.validate()?;
    if words.is_empty() {
        return Err(VoltError::EmptyCorpus);
    }
    if schedule.len() < 2 {
        return Err(VoltError::InvalidSchedule("at least two timesteps are needed to score MUV".into()));
    }
    let last = *schedule.sizes().last().unwrap();
    if last > candidates.len() {
        return Err(VoltError::InvalidSchedule(format!(
            "largest budget {last} exceeds the {} available candidates",
            candidates.len()
        )));
    }
    let chars = count_chars(words);
    let cand_chars: std::collections::HashSet<char> = candidates.chars().collect();
    if let Some(c) = chars.chars().find(|c| !cand_chars.contains(c)) {
        return Err(VoltError::InconsistentInputs(format!(
            "corpus character {c:?} is missing from the candidate list"
        )));
    }
    if schedule.sizes()[0] < cand_chars.len() {
        return Err(VoltError::InvalidSchedule(format!(
            "smallest budget {} is below the {} characters every vocabulary must hold",
            schedule.sizes()[0],
            cand_chars.len()
        )));
    }

    let started = Instant::now();
    let solve = |t: usize| solve_timestep(words, candidates, &chars, schedule.sizes()[t], t, config, keep_plans);
    let outcomes: Vec<Result<TimestepRecord>> = if config.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| VoltError::InvalidConfig(e.to_string()))?;
        pool.install(|| (0..schedule.len()).into_par_iter().map(solve).collect())
    } else {
        (0..schedule.len()).map(solve).collect()
    };
    let solve_time = started.elapsed();

    let started = Instant::now();
    let mut trace = Vec::with_capacity(outcomes.len());
    let mut first_failure = None;
    for (t, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(rec) => trace.push(rec),
            Err(e @ VoltError::InfeasibleTransport { .. }) => {
                warn!("timestep {t} (size {}) failed: {e}", schedule.sizes()[t]);
                trace.push(failed_record(schedule.sizes()[t], &e));
                first_failure.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    score_trace(&mut trace, schedule)?;
    let selected_timestep = match select(&trace, config.selection) {
        Some(t) => t,
        None => {
            return Err(first_failure.unwrap_or_else(|| {
                VoltError::InvalidSchedule("fewer than two timesteps produced a vocabulary".into())
            }))
        }
    };
    let rec = &trace[selected_timestep];
    let mut selected_vocabulary = rec.vocabulary.clone().expect("scored timestep has a vocabulary");
    selected_vocabulary.entropy = rec.entropy;
    info!(
        "volt: selected timestep {selected_timestep} (budget {}, {} tokens, muv {:?})",
        rec.candidate_size, rec.vocab_size, rec.muv
    );
    Ok(VoltReport {
        schedule: schedule.clone(),
        trace,
        selected_timestep,
        selected_vocabulary,
        timings: PhaseTimings {
            solve: solve_time,
            select: started.elapsed(),
        },
    })
}

fn failed_record(size: usize, err: &VoltError) -> TimestepRecord {
    TimestepRecord {
        candidate_size: size,
        instance_tokens: 0,
        vocab_size: 0,
        entropy_nats: None,
        muv: None,
        sinkhorn_iterations: 0,
        converged: false,
        marginal_violation: f64::NAN,
        log_domain: false,
        all_filtered: false,
        error: Some(err.to_string()),
        vocabulary: None,
        entropy: None,
        plan: None,
    }
}

fn solve_timestep(
    words: &WordSequence,
    candidates: &CandidateList,
    chars: &crate::corpus::CharTable,
    size: usize,
    timestep: usize,
    config: &VoltConfig,
    keep_plan: bool,
) -> Result<TimestepRecord> {
    let top = top_candidates(candidates, size)?;
    let pool_vocab = Vocabulary::from_tokens(top.candidates.tokens().iter().map(|c| c.token.clone()))?;
    let freqs = count_tokens(words, &Segmenter::new(&pool_vocab, config.merge_order));

    // zero-frequency candidates carry no mass and are left out of the instance
    let (inst_tokens, inst_counts): (Vec<String>, Vec<u64>) = top
        .candidates
        .tokens()
        .iter()
        .filter_map(|c| {
            let n = freqs.count(&c.token);
            (n > 0).then(|| (c.token.clone(), n))
        })
        .unzip();
    let total = freqs.total() as f64;
    let token_dist: Vec<f64> = inst_counts.iter().map(|&n| n as f64 / total).collect();
    let dist = DistanceMatrix::new(chars.chars().collect(), inst_tokens)?;
    let plan = sinkhorn(&dist, &chars.probabilities(), &token_dist, &config.sinkhorn)?;
    let extraction = extract_vocabulary(&plan, &dist, &token_dist, &top.candidates, config.mass_threshold)?;
    if extraction.all_filtered {
        warn!("timestep {timestep} (size {size}): every multi-character token was filtered");
    }

    let mut vocabulary = extraction.vocabulary;
    let segmenter = Segmenter::new(&vocabulary, config.merge_order);
    let seg_freqs = count_tokens(words, &segmenter);
    let entropy = crate::entropy::entropy_from_frequencies(&seg_freqs, &vocabulary);
    let own_counts: Vec<u64> = vocabulary.tokens().iter().map(|t| seg_freqs.count(t)).collect();
    vocabulary = vocabulary.with_frequencies(own_counts)?.with_provenance(Provenance {
        strategy: Strategy::Volt,
        timestep: Some(timestep),
        size: Some(size),
        config_digest: None,
    });
    vocabulary.entropy = Some(entropy);

    Ok(TimestepRecord {
        candidate_size: size,
        instance_tokens: dist.n_tokens(),
        vocab_size: vocabulary.len(),
        entropy_nats: Some(entropy.entropy),
        muv: None,
        sinkhorn_iterations: plan.iterations_used,
        converged: plan.converged,
        marginal_violation: plan.marginal_violation,
        log_domain: plan.log_domain,
        all_filtered: extraction.all_filtered,
        error: None,
        vocabulary: Some(vocabulary),
        entropy: Some(entropy),
        plan: keep_plan.then_some((dist, plan)),
    })
}

/// Fills MUV for every successful timestep that has a successful predecessor.
fn score_trace(trace: &mut [TimestepRecord], schedule: &TimestepSchedule) -> Result<()> {
    let mut prev: Option<SizedEntropy> = None;
    for (t, rec) in trace.iter_mut().enumerate() {
        let Some(h) = rec.entropy_nats else { continue };
        let here = SizedEntropy {
            size: schedule.sizes()[t],
            entropy: h,
        };
        if let Some(p) = prev {
            rec.muv = Some(muv(p, here)?.value);
        }
        prev = Some(here);
    }
    Ok(())
}

/// Index of the best scored timestep; ties go to the earlier one.
fn select(trace: &[TimestepRecord], rule: SelectionRule) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (t, rec) in trace.iter().enumerate() {
        let Some(m) = rec.muv else { continue };
        let score = match rule {
            SelectionRule::MaxMuv => m,
            SelectionRule::LiteralEq3 => -m,
        };
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((t, score));
        }
    }
    best.map(|(t, _)| t)
}

/// One BPE vocabulary of a MUV-Search sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub requested_size: usize,
    pub size: usize,
    pub entropy_nats: f64,
    pub avg_token_len: f64,
    pub muv: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MuvSearchResult {
    pub points: Vec<SearchPoint>,
    /// Index into `points`.
    pub selected: usize,
    pub vocabulary: Vocabulary,
}

/// MUV-Search: trains BPE once and sweeps truncations of its merge sequence.
pub fn muv_search(words: &WordSequence, sizes: &[usize], merge_order: MergeOrder) -> Result<MuvSearchResult> {
    let max = sizes.iter().copied().max().unwrap_or(0);
    if sizes.len() < 2 || max == 0 {
        return Err(VoltError::InvalidSchedule("MUV-Search needs at least two sizes".into()));
    }
    let candidates = learn_bpe(words, max)?;
    muv_search_with(words, &candidates, sizes, merge_order)
}

/// MUV-Search over an existing merge sequence.
pub fn muv_search_with(
    words: &WordSequence,
    candidates: &CandidateList,
    sizes: &[usize],
    merge_order: MergeOrder,
) -> Result<MuvSearchResult> {
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(VoltError::InvalidSchedule("sizes must be strictly increasing".into()));
    }
    let mut points = Vec::new();
    let mut vocabs = Vec::new();
    for &size in sizes {
        let Some(vocab) = candidates.bpe_vocabulary(size) else {
            warn!("muv-search: size {size} is not reachable with these merges; skipped");
            continue;
        };
        let report = corpus_entropy_with(words, &Segmenter::new(&vocab, merge_order))?;
        points.push(SearchPoint {
            requested_size: size,
            size: vocab.len(),
            entropy_nats: report.entropy,
            avg_token_len: report.avg_token_len,
            muv: None,
        });
        let mut vocab = vocab;
        vocab.entropy = Some(report);
        vocabs.push(vocab);
    }
    if points.len() < 2 {
        return Err(VoltError::InvalidSchedule(format!(
            "only {} of the requested sizes are achievable",
            points.len()
        )));
    }
    for t in 1..points.len() {
        let prev = SizedEntropy {
            size: points[t - 1].size,
            entropy: points[t - 1].entropy_nats,
        };
        let here = SizedEntropy {
            size: points[t].size,
            entropy: points[t].entropy_nats,
        };
        points[t].muv = Some(muv(prev, here)?.value);
    }
    let mut selected = 1;
    for t in 2..points.len() {
        if points[t].muv > points[selected].muv {
            selected = t;
        }
    }
    let mut vocabulary = vocabs.swap_remove(selected);
    vocabulary.provenance = Provenance {
        strategy: Strategy::MuvSearch,
        timestep: Some(selected),
        size: Some(points[selected].size),
        config_digest: None,
    };
    Ok(MuvSearchResult {
        points,
        selected,
        vocabulary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{pre_tokenize, RawCorpus};

    fn words(text: &str) -> WordSequence {
        pre_tokenize(&RawCorpus::from_text("t", text)).unwrap()
    }

    #[test]
    fn schedule_parsing() {
        let s = TimestepSchedule::parse("1000:10000:1000").unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.interval(), Some(1000));
        let s = TimestepSchedule::parse("40000:160000:40000").unwrap();
        assert_eq!(s.sizes(), &[40_000, 80_000, 120_000, 160_000]);
        let s = TimestepSchedule::parse("3,5,9").unwrap();
        assert_eq!(s.interval(), None);
        assert!(TimestepSchedule::parse("5,3").is_err());
        assert!(TimestepSchedule::parse("1:2").is_err());
        assert!(TimestepSchedule::parse("0,1").is_err());
        assert_eq!(TimestepSchedule::default().sizes()[9], 10_000);
        assert_eq!(
            default_search_sizes(),
            [1000, 2000, 3000, 4000, 5000, 6000, 7000, 8000, 9000, 10_000, 20_000]
        );
    }

    #[test]
    fn two_step_trace_shape() {
        let ws = words("ab ab ab");
        let cands = learn_bpe(&ws, 10).unwrap();
        assert_eq!(cands.len(), 3);
        let sched = TimestepSchedule::from_sizes(vec![2, 3]).unwrap();
        let report = run_volt_with(&ws, &cands, &sched, &VoltConfig::default(), true).unwrap();
        assert_eq!(report.trace.len(), 2);
        assert!(report.trace[0].muv.is_none());
        let (dist, _) = report.trace[1].plan.as_ref().unwrap();
        assert!(dist.tokens().iter().any(|t| t == "ab"));
        assert_eq!(report.selected_timestep, 1);
    }

    #[test]
    fn flat_entropy_selects_first_scored_timestep() {
        // single-character words: no merges, every budget yields the same vocabulary
        let ws = words("a b c a b c a");
        let cands = CandidateList::from_ordered(vec![
            ("a".into(), 3),
            ("b".into(), 2),
            ("c".into(), 2),
            ("xa".into(), 0),
            ("xb".into(), 0),
            ("x".into(), 0),
        ])
        .unwrap();
        let sched = TimestepSchedule::from_sizes(vec![4, 5, 6]).unwrap();
        let report = run_volt(&ws, &cands, &sched, &VoltConfig::default());
        // "x" is a candidate char but absent from the corpus; it is simply unused
        let report = report.unwrap();
        for rec in &report.trace[1..] {
            assert_eq!(rec.muv, Some(0.0));
        }
        assert_eq!(report.selected_timestep, 1);
    }

    #[test]
    fn schedule_beyond_candidates_is_rejected() {
        let ws = words("ab ab ab");
        let cands = learn_bpe(&ws, 10).unwrap();
        let sched = TimestepSchedule::from_sizes(vec![2, 4]).unwrap();
        assert!(matches!(
            run_volt(&ws, &cands, &sched, &VoltConfig::default()),
            Err(VoltError::InvalidSchedule(_))
        ));
        let sched = TimestepSchedule::from_sizes(vec![3]).unwrap();
        assert!(run_volt(&ws, &cands, &sched, &VoltConfig::default()).is_err());
    }

    #[test]
    fn budget_below_charset_is_rejected() {
        let ws = words("abc abc");
        let cands = learn_bpe(&ws, 10).unwrap();
        let sched = TimestepSchedule::from_sizes(vec![2, 4]).unwrap();
        assert!(matches!(
            run_volt(&ws, &cands, &sched, &VoltConfig::default()),
            Err(VoltError::InvalidSchedule(_))
        ));
    }

    #[test]
    fn literal_rule_picks_the_smallest_drop() {
        let mut trace: Vec<TimestepRecord> = [None, Some(0.3), Some(0.1), Some(0.2)]
            .into_iter()
            .map(|m| TimestepRecord {
                muv: m,
                ..failed_record(1, &VoltError::EmptyCorpus)
            })
            .collect();
        assert_eq!(select(&trace, SelectionRule::MaxMuv), Some(1));
        assert_eq!(select(&trace, SelectionRule::LiteralEq3), Some(2));
        trace[3].muv = Some(0.3);
        assert_eq!(select(&trace, SelectionRule::MaxMuv), Some(1));
    }

    #[test]
    fn muv_search_two_points() {
        let ws = words("low lower lowest newer newest wider widest low lower");
        let n_chars = count_chars(&ws).len();
        let res = muv_search(&ws, &[n_chars + 1, n_chars + 3], MergeOrder::Leftmost).unwrap();
        assert_eq!(res.points.len(), 2);
        assert_eq!(res.selected, 1);
        assert_eq!(res.vocabulary.len(), n_chars + 3);
        assert_eq!(res.vocabulary.provenance.strategy, Strategy::MuvSearch);
    }

    #[test]
    fn muv_search_needs_two_reachable_sizes() {
        let ws = words("ab ab ab");
        assert!(matches!(
            muv_search(&ws, &[3, 100], MergeOrder::Leftmost),
            Err(VoltError::InvalidSchedule(_))
        ));
        assert!(muv_search(&ws, &[3], MergeOrder::Leftmost).is_err());
    }
}
