//! Exit codes and error reporting of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

fn qequiv(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qequiv")).args(args).arg("--out").arg(out).output().unwrap()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).to_string_lossy().into_owned()
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn successful_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = qequiv(&["bundle-check", "--scenario", &scenario("bundle_two_branches.json")], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(dir.path())["status"], "ok");
    assert!(dir.path().join("bundle-check.csv").exists());
}

#[test]
fn tolerance_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = qequiv(&["propagator", "--scenario", &scenario("propagator_harmonic.json")], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(report(dir.path())["exit_code"], 2);
}

#[test]
fn wrong_signature_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = qequiv(&["align", "--scenario", &scenario("align_wrong_signature.json")], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("WrongSignature"));
}

#[test]
fn unknown_field_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    std::fs::write(&file, r#"{ "kind": "qdiffeo", "seed": 1, "params": { "round_trips": 1, "bogus": 3 } }"#).unwrap();
    let o = qequiv(&["qdiffeo", "--scenario", file.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn kind_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = qequiv(&["beables", "--scenario", &scenario("qdiffeo.json")], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_flag_overrides_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("beables_signature.json");
    qequiv(&["beables", "--scenario", &path, "--seed", "9"], &dir.path().join("a"));
    qequiv(&["beables", "--scenario", &path], &dir.path().join("b"));
    assert_eq!(report(&dir.path().join("a"))["seed"], 9);
    assert_ne!(report(&dir.path().join("a")), report(&dir.path().join("b")));
}
