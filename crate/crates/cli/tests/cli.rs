use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn seg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seg"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("seg runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = seg(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn synth_then_build_docs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "--topics",
            "6",
            "--conversations",
            "300",
            "--seed",
            "7",
            "--output",
            "c.jsonl",
        ],
    );
    ok(
        d,
        &[
            "build-docs",
            "--input",
            "c.jsonl",
            "--segments",
            "5",
            "--seed",
            "7",
            "--output",
            "d.jsonl",
        ],
    );
    let text = std::fs::read_to_string(d.join("d.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 60);
    let out = ok(d, &["stats", "--input", "d.jsonl"]);
    let profile: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(profile["documents"], 60);
    assert_eq!(profile["segments"], 300);
}

#[test]
fn eval_requires_checkpoint() {
    let dir = TempDir::new().unwrap();
    let out = seg(dir.path(), &["eval", "--input", "d.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
}

#[test]
fn unknown_subcommand_and_flag_fail() {
    let dir = TempDir::new().unwrap();
    assert!(!seg(dir.path(), &["frobnicate"]).status.success());
    assert!(!seg(dir.path(), &["synth", "--output", "x", "--bogus"]).status.success());
    assert!(seg(dir.path(), &["grid", "--help"]).status.success());
}

#[test]
fn runtime_errors_are_one_line() {
    let dir = TempDir::new().unwrap();
    let out = seg(
        dir.path(),
        &["build-docs", "--input", "missing.jsonl", "--output", "d.jsonl"],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("missing.jsonl"));
}

#[test]
fn train_eval_finetune_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &["synth", "--conversations", "50", "--seed", "3", "--output", "c.jsonl"],
    );
    std::fs::write(
        d.join("run.json"),
        r#"{"corpus": {"path": "c.jsonl", "format": "chat"}, "epochs": 1,
            "model": {"family": "hierarchical", "vocab_size": 64, "emb_dim": 4, "hidden_dim": 4, "doc_hidden_dim": 4}}"#,
    )
    .unwrap();
    let trained = ok(d, &["train", "--config", "run.json", "--checkpoint", "m.ckpt"]);
    let report: serde_json::Value = serde_json::from_slice(&trained.stdout).unwrap();
    assert!(report["f1"].is_number());
    ok(d, &["build-docs", "--input", "c.jsonl", "--output", "d.jsonl"]);
    let a = ok(d, &["eval", "--checkpoint", "m.ckpt", "--input", "d.jsonl"]);
    let b = ok(
        d,
        &[
            "eval",
            "--checkpoint",
            "m.ckpt",
            "--input",
            "c.jsonl",
            "--format",
            "chat",
        ],
    );
    assert_eq!(a.stdout, b.stdout);
    ok(
        d,
        &[
            "finetune",
            "--config",
            "run.json",
            "--checkpoint",
            "m.ckpt",
            "--output",
            "m2.ckpt",
        ],
    );
    assert!(d.join("m2.ckpt").exists());
}

#[test]
fn grid_twice_is_identical() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &["synth", "--conversations", "60", "--seed", "1", "--output", "a.jsonl"],
    );
    std::fs::write(
        d.join("g.json"),
        r#"{
            "corpora": {"a": {"path": "a.jsonl", "format": "chat"}},
            "tasks": [{"task_id": "scratch", "test": "a"}, {"task_id": "tuned", "pretrain": "a", "finetune": "a", "test": "a"}],
            "models": [{"name": "h", "config": {"family": "hierarchical", "vocab_size": 64, "emb_dim": 4, "hidden_dim": 4, "doc_hidden_dim": 4}}],
            "losses": [{"name": "ce", "loss": {"kind": "ce"}}],
            "epochs": 1,
            "workers": 2
        }"#,
    )
    .unwrap();
    ok(d, &["grid", "--config", "g.json", "--out", "r1.csv"]);
    ok(d, &["grid", "--config", "g.json", "--out", "r2.csv"]);
    let r1 = std::fs::read(d.join("r1.csv")).unwrap();
    assert_eq!(r1, std::fs::read(d.join("r2.csv")).unwrap());
    assert_eq!(String::from_utf8(r1).unwrap().lines().count(), 3);
}

#[test]
fn sweep_writes_rows() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--conversations", "40", "--output", "c.jsonl"]);
    std::fs::write(
        d.join("run.json"),
        r#"{"corpus": {"path": "c.jsonl", "format": "chat"}, "epochs": 1,
            "model": {"family": "hierarchical", "vocab_size": 64, "emb_dim": 4, "hidden_dim": 4, "doc_hidden_dim": 4}}"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "sweep-segments",
            "--config",
            "run.json",
            "--min",
            "2",
            "--max",
            "4",
            "--out",
            "s.csv",
        ],
    );
    let text = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(!seg(
        d,
        &[
            "sweep-segments",
            "--config",
            "run.json",
            "--min",
            "1",
            "--max",
            "4",
            "--out",
            "s.csv"
        ]
    )
    .status
    .success());
}
