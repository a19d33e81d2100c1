use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(format!("{name}.cp"))
}

fn unfold(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unfold-por"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn read_report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn deadlock_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let out = unfold(&[corpus("fig3").to_str().unwrap(), "--emit", "json,stats"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let report = read_report(dir.path());
    assert_eq!(report["counts"]["maxConfigs"], 4);
    assert_eq!(report["counts"]["err"], 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("maximal configurations: 4"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("deadlock"));
}

#[test]
fn clean_program_exits_with_zero() {
    let dir = TempDir::new().unwrap();
    let out = unfold(&[corpus("two_lock").to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn race_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let out = unfold(&[corpus("racy_ww").to_str().unwrap(), "--emit", "json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(read_report(dir.path())["races"][0]["variable"], "x");
}

#[test]
fn limit_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let out = unfold(
        &[corpus("spin").to_str().unwrap(), "--cutoffs", "off", "--max-events", "100", "--emit", "json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let report = read_report(dir.path());
    assert_eq!(report["incomplete"], true);
    assert_eq!(report["limit"], "maxEvents");
}

#[test]
fn usage_and_parse_errors_exit_with_three() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.cp");
    std::fs::write(&bad, "thread t { lock }\n").unwrap();
    assert_eq!(unfold(&[bad.to_str().unwrap()], dir.path()).status.code(), Some(3));
    let missing = dir.path().join("missing.cp");
    assert_eq!(unfold(&[missing.to_str().unwrap()], dir.path()).status.code(), Some(3));
    let fig3 = corpus("fig3");
    assert_eq!(unfold(&[fig3.to_str().unwrap(), "--strategy", "dfs"], dir.path()).status.code(), Some(3));
    assert_eq!(unfold(&[fig3.to_str().unwrap(), "--max-events", "0"], dir.path()).status.code(), Some(3));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let artifacts = || {
        let dir = TempDir::new().unwrap();
        let out = unfold(
            &[
                corpus("broadcast").to_str().unwrap(),
                "--strategy",
                "random:42",
                "--emit",
                "json,dot-unfolding,dot-tree",
            ],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0));
        ["report.json", "unfolding.dot", "tree.dot"].map(|f| std::fs::read(dir.path().join(f)).unwrap())
    };
    assert_eq!(artifacts(), artifacts());
}

#[test]
fn help_documents_exit_codes() {
    let out = Command::new(env!("CARGO_BIN_EXE_unfold-por")).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("resource limit"));
}
