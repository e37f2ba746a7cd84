use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::Outcome;

fn sc_harmon(args: &[&str], threads: &str) {
    let out = Command::new(env!("CARGO_BIN_EXE_sc-harmon"))
        .env("SC_HARMON_THREADS", threads)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every pipeline stage once; returns the CSV files written.
fn pipeline(dir: &Path, threads: &str) -> Vec<PathBuf> {
    let run = |args: &[&str]| sc_harmon(args, threads);
    let manifest = dir.join("manifest.json");
    let retest = dir.join("retest.json");
    run(&["generate", "--nodes", "12", "--subjects", "30", "--seed", "11", "--out-dir", p(dir)]);
    run(&["augment", "--manifest", p(&manifest), "--site", "0", "--count", "20", "--seed", "11", "--out-dir", p(&dir.join("aug")), "--report"]);
    run(&["metrics", "--manifest", p(&manifest), "--out", p(&dir.join("metrics.csv"))]);
    run(&["fit-lr", "--manifest", p(&manifest), "--out", p(&dir.join("lr.csv"))]);
    run(&[
        "harmonize", "--manifest", p(&manifest), "--method", "lr", "--model", p(&dir.join("lr.csv")),
        "--target-site", "3", "--out-dir", p(&dir.join("lr")),
    ]);
    run(&[
        "evaluate", "--pred-manifest", p(&dir.join("lr/harmonized.json")), "--target-manifest", p(&manifest),
        "--retest-manifest", p(&retest), "--out", p(&dir.join("lr_report.csv")), "--normalized",
    ]);
    let cfg = dir.join("arch.json");
    fs::write(&cfg, r#"{"embedding_dim": 16, "classifier_hidden": [16]}"#).unwrap();
    let mut csvs = vec![
        dir.join("aug/report.csv"),
        dir.join("metrics.csv"),
        dir.join("lr.csv"),
        dir.join("lr_report.csv"),
        dir.join("lr_report_normalized.csv"),
    ];
    for arch in ["fae", "gae"] {
        let mdir = dir.join(arch);
        run(&[
            "train", "--manifest", p(&manifest), "--arch", arch, "--config", p(&cfg), "--epochs", "4", "--seed", "11",
            "--batch-size", "8", "--out-dir", p(&mdir),
        ]);
        let model = mdir.join("model.ckpt");
        run(&[
            "harmonize", "--manifest", p(&manifest), "--method", arch, "--model", p(&model), "--target-site", "3",
            "--out-dir", p(&mdir.join("harm")),
        ]);
        run(&[
            "export-embeddings", "--model", p(&model), "--manifest", p(&manifest), "--out", p(&mdir.join("emb.csv")),
            "--full",
        ]);
        run(&[
            "evaluate", "--pred-manifest", p(&mdir.join("harm/harmonized.json")), "--target-manifest", p(&manifest),
            "--out", p(&mdir.join("report.csv")),
        ]);
        csvs.extend([mdir.join("history.csv"), mdir.join("emb.csv"), mdir.join("report.csv")]);
    }
    csvs
}

pub fn byte_identical() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path(), "1");
    let second = pipeline(b.path(), "3");
    let differing: Vec<String> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| fs::read(x).unwrap() != fs::read(y).unwrap())
        .map(|(x, _)| x.strip_prefix(a.path()).unwrap().display().to_string())
        .collect();
    Outcome::new(
        differing.is_empty(),
        format!(
            "{} CSV outputs from generate/augment/metrics/fit-lr/train/harmonize/export-embeddings/evaluate, \
             two runs (1 and 3 threads), differing: {differing:?}",
            first.len()
        ),
    )
}
