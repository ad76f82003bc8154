//! Command-line front end.
//!
//! Data goes to files or stdout, logs go to stderr. Every JSON report carries
//! `"schema": 1`, a digest of the effective settings and SHA-256 hashes of
//! the inputs it read.

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bpe::{learn_bpe, parse_merges, CandidateList};
use crate::corpus::{count_chars, load_corpora, pre_tokenize_with_marker, WordSequence};
use crate::entropy::corpus_entropy_with;
use crate::error::{Result, VoltError};
use crate::ot::{LogDomain, SinkhornConfig};
use crate::pipeline::{
    default_search_sizes, muv_search_with, run_volt_with, SearchPoint, SelectionRule, TimestepRecord,
    TimestepSchedule, VoltConfig,
};
use crate::plot::entropy_curve_svg;
use crate::segmenter::{decode_line, MergeOrder, Segmenter};
use crate::vocab::Vocabulary;

pub const REPORT_SCHEMA: u32 = 1;
pub const DEFAULT_CANDIDATES: usize = 100_000;

#[derive(Debug, Parser)]
#[command(name = "volt", version, about = "Vocabulary learning via optimal transport")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn BPE merges and write the frequency-ranked candidate list.
    LearnCandidates(LearnArgs),
    /// Select a vocabulary by maximizing MUV over a size schedule.
    Volt(VoltArgs),
    /// Sweep BPE vocabulary sizes and keep the one with the highest MUV.
    MuvSearch(SearchArgs),
    /// Segment text with a vocabulary.
    Encode(EncodeArgs),
    /// Undo `encode`.
    Decode(DecodeArgs),
    /// Entropy statistics for vocabularies or a BPE size sweep.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Corpus file; repeat to concatenate several in order.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Read at most this many bytes, stopping at a line boundary.
    #[arg(long)]
    pub max_bytes: Option<usize>,
    /// Suffix appended to every word before counting.
    #[arg(long)]
    pub word_boundary_marker: Option<String>,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Number of BPE merges.
    #[arg(long = "candidates", default_value_t = DEFAULT_CANDIDATES)]
    pub num_merges: usize,
    /// Candidate TSV output.
    #[arg(long)]
    pub candidates_out: PathBuf,
    /// Merge rules output (`left right` per line).
    #[arg(long)]
    pub merges_out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionArg {
    MaxMuv,
    LiteralEq3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeOrderArg {
    Leftmost,
    BpeRank,
}

impl From<MergeOrderArg> for MergeOrder {
    fn from(m: MergeOrderArg) -> Self {
        match m {
            MergeOrderArg::Leftmost => MergeOrder::Leftmost,
            MergeOrderArg::BpeRank => MergeOrder::BpeRank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogDomainArg {
    Auto,
    Always,
    Never,
}

#[derive(Debug, Args)]
pub struct VoltArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Candidate TSV from `learn-candidates`.
    #[arg(long)]
    pub candidates: PathBuf,
    /// `start:stop:step` or a comma-separated list of sizes.
    #[arg(long, default_value = "1000:10000:1000")]
    pub schedule: String,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    /// Slack on the token marginal.
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Soft token marginal with this KL weight.
    #[arg(long)]
    pub unbalanced_tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = LogDomainArg::Auto)]
    pub log_domain: LogDomainArg,
    /// Fraction of its frequency a token must receive to be kept.
    #[arg(long, default_value_t = 1e-3)]
    pub mass_threshold: f64,
    #[arg(long, value_enum, default_value_t = SelectionArg::MaxMuv)]
    pub selection: SelectionArg,
    #[arg(long, value_enum, default_value_t = MergeOrderArg::Leftmost)]
    pub merge_order: MergeOrderArg,
    /// Timesteps solved in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// JSON report output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Selected vocabulary TSV; stdout when omitted.
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
    /// Dump the selected timestep's plan as TSV plus a `.json` sidecar.
    #[arg(long)]
    pub dump_plan: Option<PathBuf>,
    /// Add wall-clock timings to the report (makes it run-dependent).
    #[arg(long)]
    pub include_timings: bool,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Merge rules to truncate; learned from the corpus when omitted.
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Comma-separated vocabulary sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = MergeOrderArg::Leftmost)]
    pub merge_order: MergeOrderArg,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Vocabulary TSV.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Text to encode; stdin when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MergeOrderArg::Leftmost)]
    pub merge_order: MergeOrderArg,
    /// Replace out-of-vocabulary characters with this token.
    #[arg(long)]
    pub unk_token: Option<String>,
    #[arg(long)]
    pub word_boundary_marker: Option<String>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub word_boundary_marker: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Vocabulary TSV to evaluate; repeatable.
    #[arg(long = "vocab")]
    pub vocabs: Vec<PathBuf>,
    /// Merge rules for a BPE sweep; learned from the corpus when omitted.
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Sweep sizes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = MergeOrderArg::Leftmost)]
    pub merge_order: MergeOrderArg,
    /// Write an SVG entropy-vs-size plot with the max-MUV point starred.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::LearnCandidates(a) => cmd_learn_candidates(&a),
        Command::Volt(a) => cmd_volt(&a),
        Command::MuvSearch(a) => cmd_muv_search(&a),
        Command::Encode(a) => cmd_encode(&a),
        Command::Decode(a) => cmd_decode(&a),
        Command::Stats(a) => cmd_stats(&a),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

fn hash_file(path: &Path) -> Result<InputRecord> {
    let bytes = fs::read(path).map_err(|e| VoltError::io(path, e))?;
    Ok(InputRecord {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

/// SHA-256 of the JSON encoding of `settings`.
pub fn config_digest<T: Serialize>(settings: &T) -> Result<String> {
    let json = serde_json::to_vec(settings)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| VoltError::io(path, e))
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, contents).map_err(|e| VoltError::io(p, e)),
        None => io::stdout()
            .write_all(contents.as_bytes())
            .map_err(|e| VoltError::io("<stdout>", e)),
    }
}

fn load_words(args: &CorpusArgs) -> Result<WordSequence> {
    let raw = load_corpora(&args.inputs, args.max_bytes)?;
    info!("read {} lines ({} bytes) from {}", raw.lines().len(), raw.byte_count(), raw.source_id());
    let words = pre_tokenize_with_marker(&raw, args.word_boundary_marker.as_deref())?;
    info!("{} distinct words, {} occurrences", words.len(), words.total_occurrences());
    Ok(words)
}

fn hash_inputs(args: &CorpusArgs) -> Result<Vec<InputRecord>> {
    args.inputs.iter().map(|p| hash_file(p)).collect()
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn cmd_learn_candidates(args: &LearnArgs) -> Result<()> {
    let words = load_words(&args.corpus)?;
    let list = learn_bpe(&words, args.num_merges)?;
    info!("learned {} merges, {} candidates", list.merge_rules().len(), list.len());
    write_output(Some(&args.candidates_out), &list.to_tsv())?;
    write_output(Some(&args.merges_out), &list.merges_text())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltSettings {
    pub max_bytes: Option<usize>,
    pub word_boundary_marker: Option<String>,
    pub schedule: Vec<usize>,
    pub gamma: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub epsilon: f64,
    pub unbalanced_tau: Option<f64>,
    pub log_domain: String,
    pub mass_threshold: f64,
    pub selection: String,
    pub merge_order: String,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub candidate_size: usize,
    pub instance_tokens: usize,
    pub vocab_size: usize,
    pub entropy_nats: Option<f64>,
    pub muv: Option<f64>,
    pub sinkhorn_iterations: usize,
    pub converged: bool,
    pub marginal_violation: Option<f64>,
    pub log_domain: bool,
    pub all_filtered: bool,
    pub error: Option<String>,
}

impl From<&TimestepRecord> for TraceEntry {
    fn from(r: &TimestepRecord) -> Self {
        TraceEntry {
            candidate_size: r.candidate_size,
            instance_tokens: r.instance_tokens,
            vocab_size: r.vocab_size,
            entropy_nats: r.entropy_nats,
            muv: r.muv,
            sinkhorn_iterations: r.sinkhorn_iterations,
            converged: r.converged,
            marginal_violation: r.marginal_violation.is_finite().then_some(r.marginal_violation),
            log_domain: r.log_domain,
            all_filtered: r.all_filtered,
            error: r.error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timings {
    pub load_seconds: f64,
    pub solve_seconds: f64,
    pub select_seconds: f64,
    pub write_seconds: f64,
}

/// On-disk VOLT report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltReportFile {
    pub schema: u32,
    pub command: String,
    pub config_digest: String,
    pub config: VoltSettings,
    pub inputs: Vec<InputRecord>,
    pub candidates: InputRecord,
    pub schedule: Vec<usize>,
    pub trace: Vec<TraceEntry>,
    pub selected_timestep: usize,
    pub selected_size: usize,
    pub selected_vocab_size: usize,
    pub selected_entropy_nats: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

fn selection_name(s: SelectionArg) -> String {
    match s {
        SelectionArg::MaxMuv => "max-muv".into(),
        SelectionArg::LiteralEq3 => "literal-eq3".into(),
    }
}

fn merge_order_name(m: MergeOrderArg) -> String {
    match m {
        MergeOrderArg::Leftmost => "leftmost".into(),
        MergeOrderArg::BpeRank => "bpe-rank".into(),
    }
}

pub fn cmd_volt(args: &VoltArgs) -> Result<()> {
    let t0 = Instant::now();
    let schedule = TimestepSchedule::parse(&args.schedule)?;
    let sinkhorn = SinkhornConfig {
        gamma: args.gamma,
        max_iters: args.max_iters,
        tolerance: args.tolerance,
        epsilon_relax: args.epsilon,
        unbalanced_tau: args.unbalanced_tau,
        log_domain: match args.log_domain {
            LogDomainArg::Auto => LogDomain::Auto,
            LogDomainArg::Always => LogDomain::Always,
            LogDomainArg::Never => LogDomain::Never,
        },
    };
    sinkhorn.validate()?;
    if args.jobs == 0 {
        return Err(VoltError::InvalidConfig("--jobs must be at least 1".into()));
    }
    if args.mass_threshold.is_nan() || args.mass_threshold < 0.0 {
        return Err(VoltError::InvalidConfig("--mass-threshold must be non-negative".into()));
    }
    let config = VoltConfig {
        sinkhorn,
        selection: match args.selection {
            SelectionArg::MaxMuv => SelectionRule::MaxMuv,
            SelectionArg::LiteralEq3 => SelectionRule::LiteralEq3,
        },
        merge_order: args.merge_order.into(),
        mass_threshold: args.mass_threshold,
        jobs: args.jobs,
    };
    let settings = VoltSettings {
        max_bytes: args.corpus.max_bytes,
        word_boundary_marker: args.corpus.word_boundary_marker.clone(),
        schedule: schedule.sizes().to_vec(),
        gamma: args.gamma,
        max_iters: args.max_iters,
        tolerance: args.tolerance,
        epsilon: args.epsilon,
        unbalanced_tau: args.unbalanced_tau,
        log_domain: format!("{:?}", config.sinkhorn.log_domain).to_lowercase(),
        mass_threshold: args.mass_threshold,
        selection: selection_name(args.selection),
        merge_order: merge_order_name(args.merge_order),
        jobs: args.jobs,
    };
    let digest = config_digest(&settings)?;

    let words = load_words(&args.corpus)?;
    let candidates_text = read_to_string(&args.candidates)?;
    let candidates = CandidateList::from_tsv(&args.candidates.display().to_string(), &candidates_text)?;
    let load_time = t0.elapsed();

    let report = run_volt_with(&words, &candidates, &schedule, &config, args.dump_plan.is_some())?;

    let t_write = Instant::now();
    let mut vocab = report.selected_vocabulary.clone();
    vocab.provenance.config_digest = Some(digest.clone());
    write_output(args.vocab_out.as_deref(), &vocab.to_tsv())?;

    if let Some(path) = &args.dump_plan {
        let (dist, plan) = report.selected().plan.as_ref().expect("plans kept when dumping");
        write_output(Some(path), &plan.to_tsv(dist))?;
        let sidecar = serde_json::json!({
            "gamma": args.gamma,
            "iterations_used": plan.iterations_used,
            "marginal_violation": plan.marginal_violation,
            "converged": plan.converged,
        });
        let mut side = path.clone().into_os_string();
        side.push(".json");
        write_output(Some(Path::new(&side)), &to_json_pretty(&sidecar)?)?;
    }

    if let Some(path) = &args.report {
        let selected = report.selected();
        let mut file = VoltReportFile {
            schema: REPORT_SCHEMA,
            command: "volt".into(),
            config_digest: digest,
            config: settings,
            inputs: hash_inputs(&args.corpus)?,
            candidates: hash_file(&args.candidates)?,
            schedule: schedule.sizes().to_vec(),
            trace: report.trace.iter().map(TraceEntry::from).collect(),
            selected_timestep: report.selected_timestep,
            selected_size: selected.candidate_size,
            selected_vocab_size: selected.vocab_size,
            selected_entropy_nats: selected.entropy_nats,
            timings: None,
        };
        if args.include_timings {
            file.timings = Some(Timings {
                load_seconds: load_time.as_secs_f64(),
                solve_seconds: report.timings.solve.as_secs_f64(),
                select_seconds: report.timings.select.as_secs_f64(),
                write_seconds: t_write.elapsed().as_secs_f64(),
            });
        }
        write_output(Some(path), &to_json_pretty(&file)?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    pub max_bytes: Option<usize>,
    pub word_boundary_marker: Option<String>,
    pub sizes: Vec<usize>,
    pub merge_order: String,
    pub merges_learned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchReportFile {
    pub schema: u32,
    pub command: String,
    pub config_digest: String,
    pub config: SearchSettings,
    pub inputs: Vec<InputRecord>,
    pub merges: Option<InputRecord>,
    pub points: Vec<SearchPoint>,
    pub selected: usize,
    pub selected_size: usize,
}

fn merges_or_learn(words: &WordSequence, merges: Option<&Path>, max_size: usize) -> Result<CandidateList> {
    match merges {
        Some(p) => {
            let rules = parse_merges(&p.display().to_string(), &read_to_string(p)?)?;
            let chars = count_chars(words);
            let base = CandidateList::from_ordered(chars.chars().map(|c| (c.to_string(), chars.count(c))).collect())?;
            Ok(base.with_merge_rules(rules))
        }
        None => learn_bpe(words, max_size.max(1)),
    }
}

pub fn cmd_muv_search(args: &SearchArgs) -> Result<()> {
    let sizes = args.sizes.clone().unwrap_or_else(default_search_sizes);
    let settings = SearchSettings {
        max_bytes: args.corpus.max_bytes,
        word_boundary_marker: args.corpus.word_boundary_marker.clone(),
        sizes: sizes.clone(),
        merge_order: merge_order_name(args.merge_order),
        merges_learned: args.merges.is_none(),
    };
    let digest = config_digest(&settings)?;
    let words = load_words(&args.corpus)?;
    let max = sizes.iter().copied().max().unwrap_or(0);
    let candidates = merges_or_learn(&words, args.merges.as_deref(), max)?;
    let result = muv_search_with(&words, &candidates, &sizes, args.merge_order.into())?;
    let mut vocab = result.vocabulary.clone();
    vocab.provenance.config_digest = Some(digest.clone());
    let freqs = crate::corpus::count_tokens(&words, &Segmenter::new(&vocab, args.merge_order.into()));
    let counts = vocab.tokens().iter().map(|t| freqs.count(t)).collect();
    let vocab = vocab.with_frequencies(counts)?;
    write_output(args.vocab_out.as_deref(), &vocab.to_tsv())?;
    if let Some(path) = &args.report {
        let file = SearchReportFile {
            schema: REPORT_SCHEMA,
            command: "muv-search".into(),
            config_digest: digest,
            config: settings,
            inputs: hash_inputs(&args.corpus)?,
            merges: args.merges.as_deref().map(hash_file).transpose()?,
            selected_size: result.points[result.selected].size,
            points: result.points,
            selected: result.selected,
        };
        write_output(Some(path), &to_json_pretty(&file)?)?;
    }
    Ok(())
}

fn open_lines(input: Option<&Path>) -> Result<Box<dyn BufRead>> {
    Ok(match input {
        Some(p) => Box::new(io::BufReader::new(fs::File::open(p).map_err(|e| VoltError::io(p, e))?)),
        None => Box::new(io::BufReader::new(io::stdin())),
    })
}

fn open_output(output: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match output {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(|e| VoltError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub fn cmd_encode(args: &EncodeArgs) -> Result<()> {
    let vocab = Vocabulary::from_tsv(&args.vocab.display().to_string(), &read_to_string(&args.vocab)?)?;
    let segmenter =
        Segmenter::new(&vocab, args.merge_order.into()).with_marker(args.word_boundary_marker.as_deref());
    let reader = open_lines(args.input.as_deref())?;
    let mut out = open_output(args.output.as_deref())?;
    let out_err = |e| VoltError::io("<output>", e);
    let mut oov = 0usize;
    for line in reader.lines() {
        let line = line.map_err(|e| VoltError::io("<input>", e))?;
        let enc = segmenter.encode(&line);
        oov += enc.oov_count();
        writeln!(out, "{}", enc.render(args.unk_token.as_deref())).map_err(out_err)?;
    }
    out.flush().map_err(out_err)?;
    if oov > 0 {
        info!("{oov} out-of-vocabulary characters");
    }
    Ok(())
}

pub fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    let reader = open_lines(args.input.as_deref())?;
    let mut out = open_output(args.output.as_deref())?;
    let out_err = |e| VoltError::io("<output>", e);
    for line in reader.lines() {
        let line = line.map_err(|e| VoltError::io("<input>", e))?;
        writeln!(out, "{}", decode_line(&line, args.word_boundary_marker.as_deref())).map_err(out_err)?;
    }
    out.flush().map_err(out_err)
}

/// One `stats` output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsLine {
    pub size: usize,
    pub entropy_nats: f64,
    pub avg_token_len: f64,
}

pub fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let words = load_words(&args.corpus)?;
    let order: MergeOrder = args.merge_order.into();
    let mut lines: Vec<StatsLine> = Vec::new();
    for path in &args.vocabs {
        let vocab = Vocabulary::from_tsv(&path.display().to_string(), &read_to_string(path)?)?;
        let r = corpus_entropy_with(&words, &Segmenter::new(&vocab, order))?;
        lines.push(StatsLine {
            size: vocab.len(),
            entropy_nats: r.entropy,
            avg_token_len: r.avg_token_len,
        });
    }
    if args.vocabs.is_empty() || args.sizes.is_some() || args.merges.is_some() {
        let sizes = args.sizes.clone().unwrap_or_else(default_search_sizes);
        let max = sizes.iter().copied().max().unwrap_or(0);
        let candidates = merges_or_learn(&words, args.merges.as_deref(), max)?;
        for &size in &sizes {
            let Some(vocab) = candidates.bpe_vocabulary(size) else {
                log::warn!("size {size} is not reachable; skipped");
                continue;
            };
            let r = corpus_entropy_with(&words, &Segmenter::new(&vocab, order))?;
            lines.push(StatsLine {
                size: vocab.len(),
                entropy_nats: r.entropy,
                avg_token_len: r.avg_token_len,
            });
        }
    }
    let mut out = String::new();
    for l in &lines {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    write_output(None, &out)?;

    if let Some(path) = &args.plot {
        let mut pts: Vec<(usize, f64)> = lines.iter().map(|l| (l.size, l.entropy_nats)).collect();
        pts.sort_by_key(|p| p.0);
        pts.dedup_by_key(|p| p.0);
        let starred = max_muv_index(&pts);
        write_output(Some(path), &entropy_curve_svg(&pts, starred))?;
    }
    Ok(())
}

/// Index of the point with the largest MUV against its predecessor.
pub fn max_muv_index(points: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for t in 1..points.len() {
        let m = -(points[t].1 - points[t - 1].1) / (points[t].0 - points[t - 1].0) as f64;
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((t, m));
        }
    }
    best.map(|(t, _)| t)
}
