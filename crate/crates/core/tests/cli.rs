mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bttrain::cli::load_model;
use bttrain::model::{build_model, Transformer};
use bttrain::tensor::Checkpoint;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bttrain"))
}

fn cfg_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.json"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn bttrain")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let cfg = cfg_path("tiny");
    let mut args = vec!["train", "--config", s(&cfg), "--out", s(out)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn train_writes_artifacts_and_checkpoint_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &["--epochs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("epoch,loss,intent_acc,slot_acc,wall_time"));

    let ck_path = dir.path().join("checkpoint.bin");
    let bytes = fs::read(&ck_path).unwrap();
    let (_, mut model) = load_model(&ck_path).unwrap();
    let meta = Checkpoint::from_bytes(&bytes).unwrap().metadata;
    assert_eq!(model.to_checkpoint(meta).to_bytes().unwrap(), bytes);

    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("sidecar.json")).unwrap()).unwrap();
    assert!(side["parameters"]["compression_ratio"].as_f64().unwrap() > 0.0);
    assert!(side["bram_plan"]["total_blocks"].as_u64().unwrap() > 0);
    assert_eq!(side["attention_layer_cost"]["schemes"].as_array().unwrap().len(), 4);
}

#[test]
fn zero_epochs_keeps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train(dir.path(), &["--epochs", "0"]).status.success());
    let saved = Checkpoint::load(dir.path().join("checkpoint.bin")).unwrap();
    let cfg = common::config("tiny");
    let mut fresh: Transformer<f32> = build_model(&cfg).unwrap();
    let init = fresh.to_checkpoint(saved.metadata.clone());
    assert_eq!(init.to_bytes().unwrap(), saved.to_bytes().unwrap());
    assert_eq!(fs::read_to_string(dir.path().join("metrics.csv")).unwrap().lines().count(), 1);
}

#[test]
fn train_is_byte_identical_across_runs_and_options() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert!(train(a.path(), &["--seed", "5"]).status.success());
    assert!(train(b.path(), &["--seed", "5", "--parallel", "--threads", "2"]).status.success());
    assert!(train(c.path(), &["--seed", "5", "--spill-activations"]).status.success());
    for f in ["metrics.csv", "checkpoint.bin", "sidecar.json"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} parallel");
        assert_eq!(x, fs::read(c.path().join(f)).unwrap(), "{f} spill");
    }
    assert!(!c.path().join("spill").exists());
}

#[test]
fn record_time_fills_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train(dir.path(), &["--epochs", "1", "--record-time"]).status.success());
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let last: f64 = metrics.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(last >= 0.0);
}

#[test]
fn gradcheck_tiny_passes() {
    let cfg = cfg_path("tiny");
    let out = run(&["gradcheck", "--config", s(&cfg)]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("max rel. err") && text.contains("PASS"));
}

#[test]
fn gradcheck_fails_impossible_threshold() {
    let cfg = cfg_path("tiny");
    let out = run(&["gradcheck", "--config", s(&cfg), "--threshold", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn costmodel_lists_four_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cfg_path("fig7");
    assert!(run(&["costmodel", "--config", s(&cfg), "--out", s(dir.path())]).status.success());
    let csv = fs::read_to_string(dir.path().join("costmodel.csv")).unwrap();
    for scheme in ["MM,18874368,", "TTM,", "TT_RTL,", "BTT,829440,"] {
        assert!(csv.contains(scheme), "{scheme} missing in {csv}");
    }
    for f in ["sweep_k.csv", "sweep_rank.csv", "schedule.json", "stages.csv"] {
        assert!(dir.path().join(f).exists());
    }
}

#[test]
fn bramplan_accepts_config_and_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = cfg_path("table2");
    assert!(run(&["bramplan", "--config", s(&cfg), "--out", s(a.path())]).status.success());
    let manifest = a.path().join("manifest.json");
    assert!(run(&["bramplan", "--config", s(&manifest), "--out", s(b.path()), "--max-group", "8"]).status.success());
    assert_eq!(fs::read(a.path().join("plan.json")).unwrap(), fs::read(b.path().join("plan.json")).unwrap());
}

#[test]
fn synth_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |f: &str| {
        let p = dir.path().join(f);
        run(&["synth-data", "--classes", "2", "--length", "32", "--count", "100", "--seed", "7", "--out", s(&p)])
    };
    assert!(args("a.jsonl").status.success());
    assert!(args("b.jsonl").status.success());
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 100);
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(cfg_path("tiny")).unwrap()).unwrap();
    v["surprise"] = serde_json::json!(1);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, v.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["train", "--config", s(&bad), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("surprise"));
    assert!(!out_dir.exists());
}
