use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kwsum::cli::SummaryRecord;
use kwsum::dataset::read_examples;
use kwsum::train::read_metrics;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Runs the binary with every path redirected into `dir` and a tiny model.
fn kwsum(dir: &Path, corpus: &Path, args: &[&str]) -> Output {
    let quoted = |p: PathBuf| format!("{:?}", p.display().to_string());
    let sets = [
        format!("paths.corpus={}", quoted(corpus.to_path_buf())),
        format!("paths.dataset={}", quoted(dir.join("dataset.jsonl"))),
        format!("paths.vocab={}", quoted(dir.join("vocab.txt"))),
        format!("paths.checkpoint_dir={}", quoted(dir.join("ckpt"))),
        format!("paths.metrics={}", quoted(dir.join("metrics.csv"))),
        format!("paths.summaries={}", quoted(dir.join("summaries.jsonl"))),
        format!("paths.extracts={}", quoted(dir.join("extracts.jsonl"))),
        format!("paths.scores={}", quoted(dir.join("scores.csv"))),
        format!("paths.experiment={}", quoted(dir.join("experiment.csv"))),
        format!("paths.attention={}", quoted(dir.join("attention.csv"))),
        "model.d_model=16".into(),
        "model.d_ff=32".into(),
        "train.epochs=2".into(),
        "decode.max_new_tokens=12".into(),
    ];
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kwsum"));
    cmd.arg("--config").arg(fixture("pipeline.toml"));
    for s in &sets {
        cmd.arg("--set").arg(s);
    }
    cmd.args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn prepared(corpus: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(kwsum(dir.path(), &fixture(corpus), &["prepare"]));
    dir
}

fn trained(corpus: &str) -> tempfile::TempDir {
    let dir = prepared(corpus);
    ok(kwsum(dir.path(), &fixture(corpus), &["train"]));
    dir
}

fn read_summaries(path: &Path) -> Vec<SummaryRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn prepare_builds_one_example_per_document() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus4.jsonl");
    let stdout = ok(kwsum(dir.path(), &corpus, &["prepare", "--classes", "nouns_and_verbs"]));
    assert_eq!(stdout.trim(), "documents 4, examples 4, skipped 0");
    let examples = read_examples(&dir.path().join("dataset.jsonl")).unwrap();
    assert_eq!(examples.len(), 4);
    assert!(examples.iter().all(|e| e.rows.len() == 4 && e.rows.iter().all(|r| r.len() == 96)));

    let first = fs::read(dir.path().join("dataset.jsonl")).unwrap();
    ok(kwsum(dir.path(), &corpus, &["prepare", "--classes", "nouns_and_verbs"]));
    assert_eq!(fs::read(dir.path().join("dataset.jsonl")).unwrap(), first);
}

#[test]
fn prepare_rejects_a_corpus_too_small_for_distractors() {
    let dir = tempfile::tempdir().unwrap();
    let three: String = fs::read_to_string(fixture("corpus4.jsonl")).unwrap().lines().take(3).map(|l| format!("{l}\n")).collect();
    let corpus = dir.path().join("three.jsonl");
    fs::write(&corpus, three).unwrap();
    let out = kwsum(dir.path(), &corpus, &["prepare"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus too small for distractors"));
}

#[test]
fn malformed_corpus_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.jsonl");
    fs::write(&corpus, "{\"id\":\"a\",\"body\":\"X y.\",\"abstract\":\"Z.\"}\n{oops\n").unwrap();
    let out = kwsum(dir.path(), &corpus, &["prepare"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn training_writes_metrics_and_resumes() {
    let dir = trained("corpus4.jsonl");
    let metrics = read_metrics(fs::File::open(dir.path().join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(metrics.len(), 4 * 2);
    for m in &metrics {
        assert!(((m.perplexity - m.lm_loss.exp()) / m.perplexity).abs() <= 1e-9);
    }
    assert!(dir.path().join("ckpt/epoch-1.ckpt").is_file());
    assert!(dir.path().join("ckpt/epoch-2.ckpt").is_file());

    let resume = dir.path().join("ckpt/epoch-2.ckpt");
    ok(kwsum(
        dir.path(),
        &fixture("corpus4.jsonl"),
        &["train", "--epochs", "3", "--resume", resume.to_str().unwrap()],
    ));
    let metrics = read_metrics(fs::File::open(dir.path().join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(metrics.iter().map(|m| m.step).collect::<Vec<_>>(), (1..=12).collect::<Vec<_>>());
    assert!(dir.path().join("ckpt/epoch-3.ckpt").is_file());
}

#[test]
fn greedy_generation_ignores_the_seed_and_sampling_respects_it() {
    let dir = trained("corpus4.jsonl");
    let corpus = fixture("corpus4.jsonl");
    let input = corpus.to_str().unwrap();
    let out = dir.path().join("summaries.jsonl");
    let run = |extra: &[&str]| {
        let mut args = vec!["generate", "--input", input];
        args.extend_from_slice(extra);
        ok(kwsum(dir.path(), &corpus, &args));
        read_summaries(&out)
    };
    let g1 = run(&["--greedy", "--seed", "1"]);
    let g2 = run(&["--greedy", "--seed", "2"]);
    let text = |r: &[SummaryRecord]| r.iter().map(|x| x.summary.clone()).collect::<Vec<_>>();
    assert_eq!(text(&g1), text(&g2));
    assert!(g1.iter().all(|r| r.params.greedy));

    let s1 = run(&["--seed", "5"]);
    let s2 = run(&["--seed", "5"]);
    assert_eq!(s1, s2);
    assert_eq!(s1.len(), 4);
    assert!(s1.iter().all(|r| r.params.t == 1.0 && r.params.p == 0.8 && r.params.k == 50 && !r.params.greedy));
}

#[test]
fn empty_keywords_are_flagged() {
    let dir = trained("corpus4.jsonl");
    let input = dir.path().join("kw.jsonl");
    fs::write(&input, "{\"id\":\"empty\",\"keywords\":[]}\n{\"id\":\"some\",\"keywords\":\"virus spread\"}\n").unwrap();
    ok(kwsum(dir.path(), &fixture("corpus4.jsonl"), &["generate", "--input", input.to_str().unwrap()]));
    let recs = read_summaries(&dir.path().join("summaries.jsonl"));
    assert!(recs[0].empty_prompt && recs[0].keywords.is_empty());
    assert!(!recs[1].empty_prompt);
    assert_eq!(recs[1].keywords, vec!["virus", "spread"]);
}

#[test]
fn generation_needs_a_checkpoint() {
    let dir = prepared("corpus4.jsonl");
    let out = kwsum(dir.path(), &fixture("corpus4.jsonl"), &["generate", "--keywords", "virus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn experiment_grid_shape_control_and_repeatability() {
    let dir = trained("corpus4.jsonl");
    let corpus = fixture("corpus4.jsonl");
    ok(kwsum(dir.path(), &corpus, &["experiment"]));
    let csv_path = dir.path().join("experiment.csv");
    let first = fs::read(&csv_path).unwrap();
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "cell");
    assert!(header.iter().any(|h| h == "rouge1_r") && header.iter().any(|h| h == "rougel_f"));
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    // 2 extractive + 3 classes × 2 ratios × 2 decodings + 1 control.
    assert_eq!(rows.len(), 15);
    let control = rows.iter().find(|r| &r[0] == "control-extractive-1.0").unwrap();
    let r1 = header.iter().position(|h| h == "rouge1_r").unwrap();
    assert_eq!(control[r1].parse::<f64>().unwrap(), 1.0);

    ok(kwsum(dir.path(), &corpus, &["experiment"]));
    assert_eq!(fs::read(&csv_path).unwrap(), first);
}

#[test]
fn attention_export_is_square_causal_and_labeled() {
    let dir = trained("corpus4.jsonl");
    ok(kwsum(
        dir.path(),
        &fixture("corpus4.jsonl"),
        &["attn", "--keywords", "remdesivir adults", "--summary", "recovery improved", "--layer", "1", "--head", "1"],
    ));
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(dir.path().join("attention.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let n = rows.len() - 1;
    assert_eq!(n, 7);
    let labels: Vec<&str> = rows[0].iter().skip(1).collect();
    assert_eq!(labels[0], "<BOS>");
    assert_eq!(labels[3], "<S>");
    assert_eq!(labels[6], "<EOS>");
    for (i, row) in rows[1..].iter().enumerate() {
        assert_eq!(row.len(), n + 1);
        let w: Vec<f64> = row.iter().skip(1).map(|v| v.parse().unwrap()).collect();
        assert!(w[i + 1..].iter().all(|&v| v == 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    let out = kwsum(dir.path(), &fixture("corpus4.jsonl"), &["attn", "--keywords", "x", "--layer", "9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extract_and_rouge_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus4.jsonl");
    ok(kwsum(dir.path(), &corpus, &["extract", "--ratio", "0.6", "--mode", "kmeans", "--distance", "cosine"]));
    let extracts = fs::read_to_string(dir.path().join("extracts.jsonl")).unwrap();
    let docs = kwsum::dataset::ingest_corpus(&corpus).unwrap().pairs;
    for (line, doc) in extracts.lines().zip(&docs) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["id"], doc.id.as_str());
        assert_eq!(v["mode"], "kmeans");
        let summary = v["summary"].as_str().unwrap();
        for sentence in kwsum::extractive::split_sentences(summary) {
            assert!(doc.body.contains(&sentence));
        }
    }

    let stdout = ok(kwsum(
        dir.path(),
        &corpus,
        &[
            "rouge",
            "--variant",
            "1,2,l,w",
            "--candidates",
            dir.path().join("extracts.jsonl").to_str().unwrap(),
            "--references",
            corpus.to_str().unwrap(),
        ],
    ));
    assert_eq!(stdout.lines().count(), 4);
    let scores = fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    let lines: Vec<&str> = scores.lines().collect();
    assert_eq!(lines[0], "variant,precision,recall,f");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("rouge-1,") && lines[4].starts_with("rouge-w,"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus4.jsonl");
    assert_eq!(kwsum(dir.path(), &corpus, &["extract", "--mode", "spectral"]).status.code(), Some(2));
    assert_eq!(kwsum(dir.path(), &corpus, &["extract", "--ratio", "0"]).status.code(), Some(2));
    assert_eq!(kwsum(dir.path(), &corpus, &["--set", "train.nope=1", "prepare"]).status.code(), Some(2));
    assert_eq!(kwsum(dir.path(), &corpus, &["frobnicate"]).status.code(), Some(2));
}
