use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use sha2::{Digest, Sha256};
use volt::cli::{SearchReportFile, StatsLine, VoltReportFile};
use volt_fixtures::ZipfCorpus;

fn volt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volt"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// A small corpus with learned candidates, ready for `volt`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("corpus.txt"), ZipfCorpus::new(51).lexicon_size(2_000).text(60_000)).unwrap();
    ok(volt(
        dir.path(),
        &[
            "learn-candidates",
            "--input",
            "corpus.txt",
            "--candidates",
            "800",
            "--candidates-out",
            "cand.tsv",
            "--merges-out",
            "merges.txt",
        ],
    ));
    dir
}

const VOLT_ARGS: &[&str] = &[
    "volt",
    "--input",
    "corpus.txt",
    "--candidates",
    "cand.tsv",
    "--schedule",
    "100:500:200",
];

#[test]
fn learn_candidates_writes_ranked_tsv_and_merges() {
    let dir = workspace();
    let tsv = fs::read_to_string(dir.path().join("cand.tsv")).unwrap();
    let counts: Vec<u64> = tsv.lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    let merges = fs::read_to_string(dir.path().join("merges.txt")).unwrap();
    assert_eq!(merges.lines().count(), 800);
    assert!(merges.lines().all(|l| l.split(' ').count() == 2));
}

#[test]
fn volt_report_validates_against_schema() {
    let dir = workspace();
    let mut args = VOLT_ARGS.to_vec();
    args.extend(["--report", "report.json", "--vocab-out", "vocab.tsv"]);
    ok(volt(dir.path(), &args));

    let report: VoltReportFile = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.schema, 1);
    assert_eq!(report.command, "volt");
    assert_eq!(report.config_digest.len(), 64);
    assert_eq!(report.schedule, vec![100, 300, 500]);
    assert_eq!(report.trace.len(), 3);
    assert!(report.trace[0].muv.is_none());
    assert!(report.trace[1..].iter().all(|t| t.muv.is_some()));
    assert!(report.timings.is_none());
    assert_eq!(report.config.gamma, 0.1);

    let corpus = fs::read(dir.path().join("corpus.txt")).unwrap();
    assert_eq!(report.inputs.len(), 1);
    assert_eq!(report.inputs[0].sha256, hex::encode(Sha256::digest(&corpus)));
    assert_eq!(report.inputs[0].bytes, corpus.len() as u64);

    let vocab = fs::read_to_string(dir.path().join("vocab.tsv")).unwrap();
    assert_eq!(vocab.lines().count(), report.selected_vocab_size);
}

#[test]
fn digest_tracks_settings_but_not_outputs() {
    let dir = workspace();
    let run = |extra: &[&str]| {
        let mut args = VOLT_ARGS.to_vec();
        args.extend(["--report", "r.json"]);
        args.extend(extra);
        ok(volt(dir.path(), &args));
        let r: VoltReportFile = serde_json::from_slice(&fs::read(dir.path().join("r.json")).unwrap()).unwrap();
        r.config_digest
    };
    let base = run(&["--vocab-out", "v.tsv"]);
    assert_eq!(base, run(&["--vocab-out", "other.tsv"]));
    assert_ne!(base, run(&["--vocab-out", "v.tsv", "--gamma", "0.2"]));
}

#[test]
fn timings_only_when_requested() {
    let dir = workspace();
    let mut args = VOLT_ARGS.to_vec();
    args.extend(["--report", "r.json", "--vocab-out", "v.tsv", "--include-timings"]);
    ok(volt(dir.path(), &args));
    let r: VoltReportFile = serde_json::from_slice(&fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert!(r.timings.unwrap().solve_seconds >= 0.0);
}

#[test]
fn parallel_timesteps_give_the_same_vocabulary() {
    let dir = workspace();
    let mut one = VOLT_ARGS.to_vec();
    one.extend(["--vocab-out", "v1.tsv", "--jobs", "1"]);
    let mut four = VOLT_ARGS.to_vec();
    four.extend(["--vocab-out", "v4.tsv", "--jobs", "4"]);
    ok(volt(dir.path(), &one));
    ok(volt(dir.path(), &four));
    assert_eq!(
        fs::read(dir.path().join("v1.tsv")).unwrap(),
        fs::read(dir.path().join("v4.tsv")).unwrap()
    );
}

#[test]
fn vocabulary_goes_to_stdout_without_vocab_out() {
    let dir = workspace();
    let out = ok(volt(dir.path(), VOLT_ARGS));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() > 26);
    assert!(text.lines().all(|l| l.split('\t').count() == 2));
}

#[test]
fn plan_dump_has_sidecar() {
    let dir = workspace();
    let mut args = VOLT_ARGS.to_vec();
    args.extend(["--vocab-out", "v.tsv", "--dump-plan", "plan.tsv"]);
    ok(volt(dir.path(), &args));
    let plan = fs::read_to_string(dir.path().join("plan.tsv")).unwrap();
    assert!(plan.lines().count() > 1);
    let side: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("plan.tsv.json")).unwrap()).unwrap();
    for key in ["gamma", "iterations_used", "marginal_violation", "converged"] {
        assert!(side.get(key).is_some(), "{key}");
    }
}

#[test]
fn encode_decode_round_trip_through_stdin() {
    let dir = workspace();
    let marker = "</w>";
    ok(volt(
        dir.path(),
        &[
            "learn-candidates",
            "--input",
            "corpus.txt",
            "--word-boundary-marker",
            marker,
            "--candidates",
            "600",
            "--candidates-out",
            "mcand.tsv",
            "--merges-out",
            "mmerges.txt",
        ],
    ));
    let input = "the  quick\tbrown fox\n  jumps over ζ\n\nlazy dogs\n";
    let mut encode = Command::new(env!("CARGO_BIN_EXE_volt"))
        .current_dir(dir.path())
        .env("RUST_LOG", "warn")
        .args(["encode", "--vocab", "mcand.tsv", "--word-boundary-marker", marker])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    encode.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let encoded = ok(encode.wait_with_output().unwrap()).stdout;
    fs::write(dir.path().join("enc.txt"), &encoded).unwrap();
    let decoded = ok(volt(
        dir.path(),
        &["decode", "--input", "enc.txt", "--word-boundary-marker", marker],
    ))
    .stdout;
    let expected: String = input
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    assert_eq!(String::from_utf8(decoded).unwrap(), expected);
}

#[test]
fn unk_token_replaces_unknown_characters() {
    let dir = workspace();
    fs::write(dir.path().join("in.txt"), "aζb\n").unwrap();
    let out = ok(volt(
        dir.path(),
        &["encode", "--vocab", "cand.tsv", "--input", "in.txt", "--unk-token", "<unk>"],
    ));
    assert!(String::from_utf8(out.stdout).unwrap().contains("<unk>"));
}

#[test]
fn muv_search_report_and_vocabulary() {
    let dir = workspace();
    ok(volt(
        dir.path(),
        &[
            "muv-search",
            "--input",
            "corpus.txt",
            "--merges",
            "merges.txt",
            "--sizes",
            "100,300,500",
            "--report",
            "s.json",
            "--vocab-out",
            "s.tsv",
        ],
    ));
    let r: SearchReportFile = serde_json::from_slice(&fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(r.schema, 1);
    assert_eq!(r.points.len(), 3);
    assert!(r.merges.is_some());
    let vocab = fs::read_to_string(dir.path().join("s.tsv")).unwrap();
    assert_eq!(vocab.lines().count(), r.selected_size);
}

#[test]
fn stats_emits_json_lines_and_plot() {
    let dir = workspace();
    let out = ok(volt(
        dir.path(),
        &[
            "stats",
            "--input",
            "corpus.txt",
            "--merges",
            "merges.txt",
            "--sizes",
            "100,200,400",
            "--vocab",
            "cand.tsv",
            "--plot",
            "curve.svg",
        ],
    ));
    let lines: Vec<StatsLine> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1].size, 100);
    assert!(lines.iter().all(|l| l.entropy_nats > 0.0 && l.avg_token_len >= 1.0));
    let svg = fs::read_to_string(dir.path().join("curve.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("crimson"));
}

#[test]
fn errors_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = volt(dir.path(), &["volt", "--input", "missing.txt", "--candidates", "missing.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.txt"));

    let dir = workspace();
    let mut args = VOLT_ARGS.to_vec();
    args[VOLT_ARGS.len() - 1] = "500:100:100";
    assert_eq!(volt(dir.path(), &args).status.code(), Some(1));

    assert_eq!(volt(dir.path(), &["volt", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(volt(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn empty_corpus_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.txt"), "").unwrap();
    let out = volt(
        dir.path(),
        &["learn-candidates", "--input", "empty.txt", "--candidates-out", "c", "--merges-out", "m"],
    );
    assert_eq!(out.status.code(), Some(1));
}
