use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use bullyscan::synthetic::{lexicon_corpus, SyntheticSpec};
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bullyscan"));
    c.env_remove("EMBED_API_KEY").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr has a reason line");
    serde_json::from_str(last).expect("reason line is JSON")
}

fn synthetic_file(dir: &Path, records: usize) -> PathBuf {
    let path = dir.join("synthetic.jsonl");
    let spec = SyntheticSpec {
        records,
        ..SyntheticSpec::default()
    };
    lexicon_corpus(&spec).write(&path).unwrap();
    path
}

const RAW: &str = "userid,asker,post,ans1,severity1,bully1,ans2,severity2,bully2,ans3,severity3,bully3
u1,a1,Q: how are you A: gooood thanks,No,0,,No,0,,No,0,
u2,a2,Q: what now A: you are a <b>loser</b>,Yes,3,loser,Yes,4,loser,No,0,
u3,a3,Q: hi A: hello &amp; welcome,No,0,,No,0,,Yes,2,hi
";

#[test]
fn help_and_version_succeed() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
    assert!(run(&["train", "--help"]).status.success());
}

#[test]
fn usage_errors_exit_one_with_json_reason() {
    for args in [
        vec!["frobnicate"],
        vec!["train", "--input", "x", "--output", "y", "--bogus"],
        vec![],
        vec!["train", "--input", "x", "--output", "y", "--provider", "carrier-pigeon"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let e = error_line(&out);
        assert_eq!(e["code"], 1);
        assert_eq!(e["error"], "usage");
        assert!(!e["reason"].as_str().unwrap().is_empty());
    }
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic_file(dir.path(), 40);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "epochs = 0\n").unwrap();
    let out = run(&["train", "--input", p(&corpus), "--output", "ck", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = run(&["train", "--input", p(&corpus), "--output", "ck", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(&["train", "--input", p(&missing), "--output", "ck"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "data");

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = run(&["predict", "--checkpoint", p(&junk), "--text", "hello"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["reason"].as_str().unwrap().contains("offset"));
}

#[test]
fn provider_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic_file(dir.path(), 20);
    let out = run(&[
        "embed",
        "--input",
        p(&corpus),
        "--provider",
        "remote",
        "--endpoint",
        "http://127.0.0.1:9/v1/embeddings",
        "--model",
        "m",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "provider");
}

#[test]
fn preprocess_writes_canonical_corpus_idempotently() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    std::fs::write(&raw, RAW).unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let first = run(&["preprocess", "--input", p(&raw), "--output", p(&a)]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = run(&["preprocess", "--input", p(&raw), "--output", p(&b)]);
    assert!(second.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(first.stdout, second.stdout);

    let text = std::fs::read_to_string(&a).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["answer"], "good thanks");
    assert_eq!(lines[0]["label"], 1);
    assert_eq!(lines[1]["answer"], "you are a loser");
    assert_eq!(lines[1]["label"], -1);
    assert_eq!(lines[2]["answer"], "hello & welcome");
    assert_eq!(lines[2]["label"], 1);
    let summary: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(summary["summary"]["records_out"], 3);
}

#[test]
fn train_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic_file(dir.path(), 120);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "epochs = 2\nhidden_size = 16\n\n[provider]\nkind = \"hash\"\ndim = 16\nseed = 3\n").unwrap();
    let mut digests = Vec::new();
    let mut logs = Vec::new();
    for name in ["one.ckpt", "two.ckpt"] {
        let out_path = dir.path().join(name);
        let out = run(&["train", "--config", p(&cfg), "--seed", "7", "--input", p(&corpus), "--output", p(&out_path)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        digests.push(digest(&out_path));
        logs.push(out.stdout);
    }
    assert_eq!(digests[0], digests[1]);
    assert_eq!(logs[0], logs[1]);
    let text = String::from_utf8(logs.remove(0)).unwrap();
    let epochs: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(epochs.len(), 2);
    assert!(epochs.iter().all(|e| e["mean_loss"].as_f64().unwrap().is_finite()));

    let other = dir.path().join("other.ckpt");
    let out = run(&["train", "--config", p(&cfg), "--seed", "8", "--input", p(&corpus), "--output", p(&other)]);
    assert!(out.status.success());
    assert_ne!(digest(&other), digests[0]);
}

#[test]
fn evaluate_synthetic_checkpoint_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic_file(dir.path(), 1000);
    let ckpt = dir.path().join("model.ckpt");
    let out = run(&["train", "--input", p(&corpus), "--output", p(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let metrics = dir.path().join("metrics.json");
    let out = run(&["evaluate", "--input", p(&corpus), "--checkpoint", p(&ckpt), "--output", p(&metrics)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("Model"));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&metrics).unwrap()).unwrap();
    assert!(doc["metrics"]["accuracy"].as_f64().unwrap() >= 95.0, "{doc}");
    assert!(doc["metrics"]["macro_f1"].as_f64().unwrap() >= 0.95);
    assert_eq!(doc["metrics"]["n_examples"], 200);
    assert_eq!(doc["config"]["lr"], 0.001);

    let again = dir.path().join("metrics2.json");
    let out = run(&["evaluate", "--input", p(&corpus), "--checkpoint", p(&ckpt), "--output", p(&again)]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&metrics).unwrap(), std::fs::read(&again).unwrap());

    let out = run(&["predict", "--checkpoint", p(&ckpt), "--text", "Q: w1 w2 A: w3 w4 you idiot"]);
    assert!(out.status.success());
    let pred: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(pred["label"], -1);

    let mut child = bin()
        .args(["predict", "--checkpoint", p(&ckpt)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"Q: w5 A: w6 w7\n\nQ: w8 A: w9 loser\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let labels: Vec<i64> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["label"].as_i64().unwrap())
        .collect();
    assert_eq!(labels, [1, -1]);
}

#[test]
fn evaluate_rejects_a_different_corpus_without_all() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic_file(dir.path(), 60);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "epochs = 1\nhidden_size = 8\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    assert!(run(&["train", "--config", p(&cfg), "--input", p(&corpus), "--output", p(&ckpt)]).status.success());
    let other = dir.path().join("other.jsonl");
    lexicon_corpus(&SyntheticSpec { records: 30, seed: 5, ..SyntheticSpec::default() })
        .write(&other)
        .unwrap();
    let out = run(&["evaluate", "--input", p(&other), "--checkpoint", p(&ckpt)]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["evaluate", "--input", p(&other), "--checkpoint", p(&ckpt), "--all"]);
    assert!(out.status.success());
}

#[test]
fn compare_hash_mode_emits_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic_file(dir.path(), 150);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "epochs = 2\nhidden_size = 16\n").unwrap();
    let json_out = dir.path().join("compare.json");
    let out = run(&[
        "compare",
        "--providers",
        "hash",
        "--config",
        p(&cfg),
        "--input",
        p(&corpus),
        "--output",
        p(&json_out),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    let data: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(data.len(), 3, "{table}");
    for row in &data {
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert!(cols[cols.len() - 2].ends_with('%'), "{row}");
        cols[cols.len() - 1].parse::<f64>().unwrap();
    }
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&json_out).unwrap()).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["provider_tag"], "baseline");
    assert_ne!(rows[1]["model_tag"], rows[2]["model_tag"]);
}

#[test]
fn compare_without_configured_providers_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic_file(dir.path(), 40);
    let out = run(&["compare", "--input", p(&corpus)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn embed_populates_persistent_cache() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic_file(dir.path(), 50);
    let cache = dir.path().join("emb.cache");
    let first = run(&["embed", "--input", p(&corpus), "--cache", p(&cache)]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let a: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(a["embedded"], 50);
    assert!(a["provider_calls"].as_u64().unwrap() > 0);
    let second = run(&["embed", "--input", p(&corpus), "--cache", p(&cache)]);
    let b: serde_json::Value = serde_json::from_slice(&second.stdout).unwrap();
    assert_eq!(b["provider_calls"], 0);
    assert_eq!(b["cache_entries"], a["cache_entries"]);
}
