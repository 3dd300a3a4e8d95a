use std::path::Path;
use std::process::{Command, Output};

use calab::harness::{ExperimentConfig, RunManifest};

const SMALL: &str = r#"{"zipf_types": 60, "zipf_tokens": 6000, "vocab_cap": 64, "hidden_dim": 4, "steps": 40, "warmup_steps": 4, "batch_size": 8, "seeds": [0, 1, 2]}"#;

fn calab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calab")).args(args).current_dir(cwd).output().expect("spawn calab")
}

fn write_config(dir: &Path, name: &str, extra: &str) -> String {
    let mut doc: serde_json::Value = serde_json::from_str(SMALL).unwrap();
    let patch: serde_json::Value = serde_json::from_str(extra).unwrap();
    for (k, v) in patch.as_object().unwrap() {
        doc[k] = v.clone();
    }
    let path = dir.join(name);
    std::fs::write(&path, doc.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest(path: &Path) -> RunManifest {
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    m.without_wall_time()
}

#[test]
fn train_echoes_config_and_writes_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"optimizer": "coupled"}"#);
    let out = calab(&["--quiet", "--config", &cfg, "--out", "runs", "train"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let variant = dir.path().join("runs/coupled");
    let echoed = ExperimentConfig::load(&variant.join("config.json")).unwrap();
    assert_eq!(echoed.optimizer.as_str(), "coupled");
    assert_eq!(echoed.steps, 40);
    for s in 0..3 {
        for f in ["checkpoint.json", "manifest.json", "snapshots.csv"] {
            assert!(variant.join(format!("seed-{s}/{f}")).exists(), "seed-{s}/{f}");
        }
    }
    assert!(variant.join("unigram.csv").exists());
}

#[test]
fn seed_override_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "{}");
    for out in ["a", "b"] {
        let o = calab(&["--quiet", "--config", &cfg, "--out", out, "--seed", "7", "train"], dir.path());
        assert!(o.status.success());
    }
    let a = manifest(&dir.path().join("a/adam/seed-7/manifest.json"));
    let b = manifest(&dir.path().join("b/adam/seed-7/manifest.json"));
    assert_eq!(a, b);
    assert!(!dir.path().join("a/adam/seed-0").exists());
}

#[test]
fn metrics_probe_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let adam = write_config(dir.path(), "adam.json", "{}");
    let coupled = write_config(dir.path(), "coupled.json", r#"{"optimizer": "coupled"}"#);
    for cfg in [&adam, &coupled] {
        assert!(calab(&["--quiet", "--config", cfg, "--out", "runs", "train"], dir.path()).status.success());
    }
    let m = calab(&["--quiet", "metrics", "--run", "runs/adam/seed-0"], dir.path());
    assert!(m.status.success(), "{}", String::from_utf8_lossy(&m.stderr));
    let report: serde_json::Value = serde_json::from_slice(&m.stdout).unwrap();
    assert!(report["iso"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("runs/adam/seed-0/metrics.csv").exists());

    let p = calab(&["--quiet", "probe", "--run", "runs/adam/seed-0", "--batches", "5"], dir.path());
    assert!(p.status.success(), "{}", String::from_utf8_lossy(&p.stderr));
    assert!(dir.path().join("runs/adam/seed-0/probe.csv").exists());

    let c = calab(&["--quiet", "compare", "runs/adam", "runs/coupled", "--csv", "cmp.csv"], dir.path());
    assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
    let table = String::from_utf8(c.stdout).unwrap();
    assert!(table.starts_with("metric"));
    let mut reader = csv::Reader::from_path(dir.path().join("cmp.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header[0], "metric");
    assert!(header.contains(&"significant".to_string()));
    assert!(reader.records().count() >= 5);
}

#[test]
fn compare_rejects_mismatched_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.json", r#"{"seeds": [0, 1]}"#);
    let b = write_config(dir.path(), "b.json", r#"{"optimizer": "coupled", "seeds": [0, 2]}"#);
    for cfg in [&a, &b] {
        assert!(calab(&["--quiet", "--config", cfg, "--out", "runs", "train"], dir.path()).status.success());
    }
    let c = calab(&["--quiet", "compare", "runs/adam", "runs/coupled"], dir.path());
    assert_eq!(c.status.code(), Some(2));
}

#[test]
fn exit_codes_for_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad_value = write_config(dir.path(), "bad.json", r#"{"lr": -1.0}"#);
    std::fs::write(dir.path().join("unknown.json"), r#"{"learning_rate": 1}"#).unwrap();
    std::fs::write(dir.path().join("broken.json"), "{").unwrap();
    let cases: [&[&str]; 7] = [
        &["--config", &bad_value, "train"],
        &["--config", "unknown.json", "train"],
        &["--config", "broken.json", "unigram"],
        &["--config", "missing.json", "train"],
        &["metrics", "--run", "nowhere/seed-0"],
        &["ablate", "--mode", "wide"],
        &["frobnicate"],
    ];
    for args in cases {
        let out = calab(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn unigram_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "{}");
    let out = calab(&["--quiet", "--config", &cfg, "--out", "u", "unigram"], dir.path());
    assert!(out.status.success());
    let mut reader = csv::Reader::from_path(dir.path().join("u/unigram.csv")).unwrap();
    let col = reader.headers().unwrap().iter().position(|h| h == "prob").unwrap();
    let total: f64 = reader.records().map(|r| r.unwrap()[col].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9, "{total}");
    assert!(dir.path().join("u/vocab.txt").exists());
}

#[test]
fn ablate_scale_grid_includes_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"scale_grid": [-1, 1], "seeds": [0]}"#);
    let out = calab(&["--quiet", "--config", &cfg, "--out", "abl", "ablate", "--mode", "scale"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reader = csv::Reader::from_path(dir.path().join("abl/summary.csv")).unwrap();
    assert_eq!(reader.into_records().count(), 3);
}
