//! The command-line binary: outputs, determinism and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpc-imitation")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a/d.csv");
    let b = dir.path().join("b/d.csv");
    for out in [&a, &b] {
        let o = cli(&["gen-data", "--set", "1", "--features", "i40", "--samples", "100", "--seed", "7", "--out", arg(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().next().unwrap().split(',').count(), 41);
    assert_eq!(text.lines().count(), 101);
    assert!(dir.path().join("a/d.provenance.csv").exists());
    assert!(dir.path().join("a/config.json").exists());
}

#[test]
fn train_then_eval_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let model = dir.path().join("m.json");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"epochs": 5}, "bench_calls": 300, "bench_instances": 5}"#).unwrap();
    assert!(cli(&["gen-data", "--set", "2", "--samples", "200", "--out", arg(&data)]).status.success());
    let o = cli(&["--config", arg(&cfg), "train-sl", "--data", arg(&data), "--layers", "1", "--width", "80", "--out", arg(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let saved = std::fs::read_to_string(&model).unwrap();
    assert!(saved.contains("\"outputs\": 80"));

    let ev = dir.path().join("ev");
    let o = cli(&["--config", arg(&cfg), "eval", "--model", arg(&model), "--out", arg(&ev)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    for key in ["mean_cm", "max_cm", "std_cm", "latency_s"] {
        assert!(m.get(key).is_some(), "{key}");
    }

    let bench = dir.path().join("bench");
    let o = cli(&["--config", arg(&cfg), "bench", "--model", arg(&model), "--out", arg(&bench)]);
    assert!(o.status.success());
    let l: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(bench.join("latency.json")).unwrap()).unwrap();
    assert!(l["latency"]["median_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    assert_eq!(cli(&["gen-data", "--set", "9", "--out", "x.csv"]).status.code(), Some(1));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cli(&["eval", "--model", "a", "--expert"]).status.code(), Some(1));
    // Missing model file: an I/O error, not a numeric one.
    let o = cli(&["eval", "--model", arg(&dir.path().join("none.json")), "--out", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    // A training run that blows up is a numeric failure.
    let data = dir.path().join("d.csv");
    assert!(cli(&["gen-data", "--set", "1", "--samples", "50", "--out", arg(&data)]).status.success());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"learning_rate": 1e300, "epochs": 3}}"#).unwrap();
    let o = cli(&["--config", arg(&cfg), "train-sl", "--data", arg(&data), "--activation", "relu", "--out", arg(&dir.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"input_kinds": ["i3", "i40"], "hidden_layer_counts": [1], "widths": [4],
            "activations": ["sigmoid"], "dataset_ids": [1], "seeds": [0, 1]}"#,
    )
    .unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"dataset": {"samples_per_set": 100}, "train": {"epochs": 2}}"#).unwrap();
    let out = dir.path().join("sw");
    let o = cli(&["--config", arg(&cfg), "sweep", "--spec", arg(&spec), "--out", arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(out.join("config.json").exists());
}
