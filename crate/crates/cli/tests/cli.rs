use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

fn mvrbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvrbm")).args(args).output().expect("binary runs")
}

fn key_values(out: &Output) -> HashMap<String, String> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_train_and_score_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let gen_dir = dir.path().join("gen");
    let out = ok(mvrbm(&[
        "gen-data", "--seed", "4", "--out", path(&gen_dir), "--n-visible", "5", "--n-hidden", "2", "--n-points", "30",
        "--burn-in", "20", "--thin", "3",
    ]));
    let kv = key_values(&out);
    let data = kv["data"].clone();
    let generator = kv["generator"].clone();
    let text = std::fs::read_to_string(&data).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).collect();
    assert_eq!(rows.len(), 30);

    let model_dir = dir.path().join("model");
    let out = ok(mvrbm(&[
        "train-rbm", "--data", &data, "--hidden", "3", "--s", "inf", "--epochs", "20", "--seed", "1", "--generator",
        &generator, "--out", path(&model_dir),
    ]));
    let kv = key_values(&out);
    assert_eq!(kv["updates"], "20");
    let metrics = std::fs::read_to_string(&kv["metrics"]).unwrap();
    assert!(metrics.starts_with("epoch,metric,value,seed,config_id"));
    assert!(metrics.contains(",kld,"));

    let out = ok(mvrbm(&["eval-kld", "--generator", &generator, "--model", &kv["model"], "--data", &data]));
    let scores = key_values(&out);
    let kld: f64 = scores["kld"].parse().unwrap();
    let ll: f64 = scores["loglik_per_v"].parse().unwrap();
    assert!(kld >= 0.0 && kld.is_finite());
    assert!(ll < 0.0 && ll.is_finite());
}

#[test]
fn toy_curves_and_w_star_table() {
    let out = ok(mvrbm(&["toy-curves", "--s", "1,inf", "--w-min", "-1", "--w-max", "1", "--points", "5"]));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,w,alpha,log_likelihood,seed,config_id"));
    assert_eq!(lines.count(), 10);

    let out = ok(mvrbm(&["toy-curves", "--w-star", "0.6"]));
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().find(|l| l.starts_with("0.6,1,")).expect("s=1 row");
    let w: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((w - 0.6585).abs() < 5e-4, "{row}");
}

#[test]
fn run_artificial_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = ok(mvrbm(&[
            "run-artificial", "--seed", "3", "--reps", "2", "--epochs", "2", "--s", "1,inf", "--out", path(&out_dir),
        ]));
        let kv = key_values(&out);
        (
            kv["config_id"].clone(),
            std::fs::read(out_dir.join("summary.csv")).unwrap(),
            std::fs::read(out_dir.join("raw/rep_0001.csv")).unwrap(),
        )
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    assert_eq!(a.0.len(), 16);
}

#[test]
fn config_file_overrides_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    std::fs::write(&cfg, "kind = \"toy\"\nlevels = [\"1\", \"inf\"]\n[toy]\nbetas = [0.6]\ngrid_points = 11\n").unwrap();
    let out_dir = dir.path().join("out");
    ok(mvrbm(&["run-toy", "--config", path(&cfg), "--out", path(&out_dir)]));
    let w_star = std::fs::read_to_string(out_dir.join("w_star.csv")).unwrap();
    assert_eq!(w_star.lines().count(), 3);
    assert!(out_dir.join("metadata.json").exists());

    std::fs::write(&cfg, "kind = \"toy\"\nbogus = 1\n").unwrap();
    let out = mvrbm(&["run-toy", "--config", path(&cfg), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn errors_are_reported_with_kind_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = mvrbm(&["train-drbm", "--mnist-dir", path(dir.path()), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: "), "{stderr}");
    assert_eq!(stderr.lines().count(), 1);

    let out = mvrbm(&["train-rbm", "--s", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: usage: "));

    let out = mvrbm(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));

    assert!(mvrbm(&["--help"]).status.success());
}
