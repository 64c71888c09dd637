mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_diffloc"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).env("RUST_LOG", "warn").output().expect("binary runs");
    assert!(
        out.status.success(),
        "diffloc {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    std::fs::write(&config, common::tiny_config().to_toml().unwrap()).unwrap();
    Workspace { _dir: dir, root, config }
}

/// gen-data, train, eval --fused; returns the errors CSV.
fn pipeline(ws: &Workspace, tag: &str, method: &str) -> String {
    let data = ws.root.join(format!("{tag}.dset"));
    let models = ws.root.join(format!("{tag}-models"));
    let report = ws.root.join(format!("{tag}-report"));
    let cfg = s(&ws.config);
    run(&["gen-data", "--config", cfg, "--seed", "5", "--out", s(&data)]);
    run(&["train", "--config", cfg, "--seed", "5", "--data", s(&data), "--method", method, "--bs", "all", "--out", s(&models)]);
    run(&["eval", "--config", cfg, "--seed", "5", "--models", s(&models), "--data", s(&data), "--fused", "--out", s(&report)]);
    std::fs::read_to_string(report.join("errors.csv")).unwrap()
}

#[test]
fn train_all_writes_one_checkpoint_per_bs_and_eval_writes_fused_row() {
    let ws = workspace();
    let csv = pipeline(&ws, "ct", "diffloc-ct");
    let mut ckpts: Vec<String> = std::fs::read_dir(ws.root.join("ct-models"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    ckpts.sort();
    assert_eq!(ckpts, ["diffloc-ct_bs0.ckpt", "diffloc-ct_bs1.ckpt", "diffloc-ct_bs2.ckpt"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,bs,n,mean_cm,p50_cm,p90_cm,max_cm"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..2], ["diffloc-ct", "fused"]);
    assert!(row[3].parse::<f64>().unwrap() > 0.0);
    assert_eq!(lines.next(), None);
}

#[test]
fn same_config_and_seed_give_identical_reports() {
    let ws = workspace();
    let a = pipeline(&ws, "a", "diffloc-unet");
    let b = pipeline(&ws, "b", "diffloc-unet");
    assert_eq!(a, b);
    let da = std::fs::read(ws.root.join("a.dset")).unwrap();
    let db = std::fs::read(ws.root.join("b.dset")).unwrap();
    assert_eq!(da, db);
}

#[test]
fn unknown_flag_is_rejected() {
    let out = bin().args(["gen-data", "--out", "x.dset", "--frobnicate"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--frobnicate"));
}

#[test]
fn missing_dataset_names_the_path() {
    let ws = workspace();
    let missing = ws.root.join("nowhere.dset");
    let out = bin()
        .args(["train", "--config", s(&ws.config), "--data", s(&missing), "--method", "grid", "--out", s(&ws.root)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("nowhere.dset"), "{err}");
}
