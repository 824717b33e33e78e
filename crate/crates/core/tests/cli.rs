use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aapl::harness::{harmonic_mean, ExperimentConfig};

fn aapl(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aapl")).args(args).output().expect("run aapl")
}

fn smoke_config(dir: &Path) -> PathBuf {
    let mut c = ExperimentConfig::default();
    c.dataset.per_class_count = 24;
    c.dataset.shots = 4;
    c.training.epochs = 2;
    c.profiling.samples = 6;
    let path = dir.join("smoke.toml");
    std::fs::write(&path, c.to_toml_string().unwrap()).unwrap();
    path
}

fn p(s: &str) -> &Path {
    Path::new(s)
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn train_then_eval_agrees_with_metrics_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let out = dir.path().join("run");
    stdout(&aapl(&[p("train"), &cfg, p("--out"), &out]));
    for f in ["checkpoint.bin", "metrics.csv", "summary.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let ckpt = out.join("checkpoint.bin");
    let eval = |split: &str| -> f64 {
        stdout(&aapl(&[p("eval"), &ckpt, &cfg, p("--split"), p(split)])).trim().parse().unwrap()
    };
    let (base, new) = (eval("base"), eval("new"));

    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("#format=aapl-metrics/1"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let col = |row: &[&str], name: &str| -> f64 { row[header.iter().position(|h| *h == name).unwrap()].parse().unwrap() };
    for row in &rows {
        assert_eq!(col(row, "hm"), harmonic_mean(col(row, "base_acc"), col(row, "new_acc")).unwrap().value);
    }
    let last = rows.last().unwrap();
    assert_eq!(col(last, "base_acc"), base);
    assert_eq!(col(last, "new_acc"), new);
    assert_eq!(col(last, "hm"), harmonic_mean(base, new).unwrap().value);
}

#[test]
fn profile_and_export_write_one_row_per_delta_token() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let out = dir.path().join("run");
    stdout(&aapl(&[p("train"), &cfg, p("--out"), &out]));
    let ckpt = out.join("checkpoint.bin");
    let prof = dir.path().join("prof");
    stdout(&aapl(&[p("profile"), &ckpt, &cfg, p("--out"), &prof]));

    let embeddings = std::fs::read_to_string(prof.join("embeddings.csv")).unwrap();
    assert_eq!(embeddings.lines().count(), 1 + 14 * 6);
    let silhouette = std::fs::read_to_string(prof.join("silhouette.csv")).unwrap();
    assert_eq!(silhouette.lines().count(), 1 + 14 + 1);
    assert!(silhouette.lines().last().unwrap().starts_with("overall,"));

    let export = dir.path().join("nested/dump.csv");
    stdout(&aapl(&[p("export-embeddings"), &ckpt, &cfg, &export]));
    assert_eq!(std::fs::read_to_string(export).unwrap(), embeddings);
}

#[test]
fn sweep_over_constraint_modes_labels_each_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let out = dir.path().join("sweep");
    stdout(&aapl(&[
        p("sweep"),
        &cfg,
        p("--grid"),
        p("alpha=1"),
        p("--grid"),
        p("constraint_mode=c2,c4"),
        p("--out"),
        &out,
    ]));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let modes: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(modes, ["adt-c2", "adt-c4"]);
    assert!(out.join("run_000/metrics.csv").exists() && out.join("run_001/metrics.csv").exists());
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());

    let o = aapl(&[p("train"), &cfg, p("--frobnicate")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[training]\nalpha = 0.0\nbeta = 0.0\n").unwrap();
    assert_eq!(aapl(&[p("train"), &bad]).status.code(), Some(1));

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "[training]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(aapl(&[p("train"), &unknown]).status.code(), Some(1));

    assert_eq!(aapl(&[p("sweep"), &cfg, p("--grid"), p("lr=0.1")]).status.code(), Some(1));
    let missing = dir.path().join("missing.bin");
    assert_eq!(aapl(&[p("eval"), &missing, &cfg, p("--split"), p("base")]).status.code(), Some(1));
    assert_eq!(aapl(&[p("eval"), &missing, &cfg, p("--split"), p("old")]).status.code(), Some(1));
}
