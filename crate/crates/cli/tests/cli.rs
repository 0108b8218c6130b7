use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn dr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dr"))
        .args(args)
        .output()
        .expect("dr binary runs")
}

fn ok(args: &[&str]) -> Vec<Value> {
    let out = dr(args);
    assert!(
        out.status.success(),
        "dr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("JSON line"))
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small corpus plus a trained checkpoint under `root`.
fn trained(root: &Path, name: &str) -> std::path::PathBuf {
    let data = root.join("data.csv");
    if !data.exists() {
        ok(&[
            "synth",
            "--output",
            s(&data),
            "--clusters",
            "3",
            "--items-per-cluster",
            "10",
            "--users",
            "80",
            "--interactions-per-user",
            "8",
            "--seed",
            "4",
        ]);
    }
    let out = root.join(name);
    ok(&[
        "train",
        "--profile",
        "synthetic",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--epochs",
        "2",
        "-K",
        "4",
        "-D",
        "2",
        "-J",
        "2",
        "--beam",
        "4",
        "--validation-users",
        "5",
        "--test-users",
        "5",
        "--seed",
        "9",
    ]);
    out
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let root = TempDir::new().unwrap();
    let a = trained(root.path(), "a");
    let b = trained(root.path(), "b");
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn retrieve_prints_k_items() {
    let root = TempDir::new().unwrap();
    let ckpt = trained(root.path(), "ckpt");
    let lines = ok(&[
        "retrieve",
        "--checkpoint",
        s(&ckpt),
        "--user-seq",
        "0,1,2",
        "--k",
        "5",
    ]);
    let items: Vec<&Value> = lines.iter().filter(|l| l["record"] == "item").collect();
    assert_eq!(items.len(), 5);

    let exact = ok(&[
        "retrieve",
        "--checkpoint",
        s(&ckpt),
        "--user-seq",
        "0,1,2",
        "--k",
        "5",
        "--brute-force",
    ]);
    assert_eq!(exact.iter().filter(|l| l["record"] == "item").count(), 5);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(dr(&["train", "--no-such-flag"]).status.code(), Some(2));

    let root = TempDir::new().unwrap();
    let ckpt = trained(root.path(), "ckpt");
    let out = dr(&[
        "retrieve",
        "--checkpoint",
        s(&ckpt),
        "--user-seq",
        "0",
        "--k",
        "99999",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_one() {
    let root = TempDir::new().unwrap();
    let out = dr(&["inspect", "--checkpoint", s(&root.path().join("absent"))]);
    assert_eq!(out.status.code(), Some(1));
}
