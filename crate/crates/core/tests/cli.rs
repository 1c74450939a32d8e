use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const PLAN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example_plan.toml");

fn ilv(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilv"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(["--workers", "1"])
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_replay_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = ilv(dir.path(), &["run", PLAN]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("run\tmechanism\tstatus"));

    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 8);
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);

    let run = &runs[5];
    let id = run["id"].as_str().unwrap();
    let updates = run["updates"].as_u64().unwrap() as usize;
    assert!(dir.path().join(format!("trajectories/{id}.tsv")).exists());

    let out = ilv(dir.path(), &["replay", id]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("matches the report"));

    let tsv = stdout(&ilv(dir.path(), &["export", id]));
    let saved = std::fs::read_to_string(dir.path().join(format!("trajectories/{id}.tsv"))).unwrap();
    assert_eq!(tsv, saved);
    assert_eq!(tsv.lines().filter(|l| !l.starts_with('#')).count(), updates + 2);

    let jsonl = stdout(&ilv(dir.path(), &["--format", "objects", "export", id]));
    let last: Value = serde_json::from_str(jsonl.lines().filter(|l| l.starts_with("{\"t\"")).last().unwrap()).unwrap();
    assert_eq!(last["t"].as_u64().unwrap() as usize, updates);
}

#[test]
fn seed_override_changes_the_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ilv(a.path(), &["run", PLAN]);
    ilv(b.path(), &["--seed", "8", "run", PLAN]);
    let read = |d: &Path| std::fs::read_to_string(d.join("trajectories/m0-g0-s0.tsv")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
    let out = ilv(b.path(), &["replay", "m0-g0-s0"]);
    assert!(out.status.success());
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\n").unwrap();
    let out = ilv(dir.path(), &["run", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert!(!ilv(dir.path(), &["replay", "m0-g0-s0"]).status.success());
    assert!(!ilv(dir.path(), &["verify", "nonsense"]).status.success());
}

#[test]
fn verify_preset_prints_a_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = ilv(dir.path(), &["verify", "de-residual"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS"));
}
