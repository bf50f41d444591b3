use std::path::Path;
use std::process::{Command, Output};

fn spinglass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinglass")).args(args).output().unwrap()
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn exact_field_run_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spinglass(&["exact", "--model", "field", "--n", "8", "--beta", "0.5,1", "--out", &path(tmp.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("exact");
    for f in ["free_energy-8.csv", "histogram-8.csv", "summary-8.json", "manifest.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "model = \"field\"\nn = [6, 8]\nseed = 3\nbeta = [0.5]\nexperiment = \"fromfile\"\n").unwrap();
    let out = spinglass(&["exact", "--config", &path(&cfg), "--seed", "9", "--out", &path(tmp.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("fromfile"));
    assert_eq!(m["config"]["seed"], 9);
    assert_eq!(m["config"]["ns"], serde_json::json!([6, 8]));
    assert_eq!(m["config"]["model"], "field");
}

#[test]
fn invalid_configuration_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spinglass(&["concentration", "--n", "8", "--c", "0.6", "--cprime", "0.6", "--lambda0", "0.9", "--out", &path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("cprime") && err.contains("lambda0"), "{err}");
    assert!(!tmp.path().join("concentration").exists());
}

#[test]
fn missing_config_file_exits_with_two() {
    let out = spinglass(&["exact", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn auto_mode_falls_back_to_sampling_above_the_limit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spinglass(&[
        "exact", "--model", "field", "--n", "14", "--beta", "0,0.5,1", "--enumeration-limit", "12",
        "--sweeps", "300", "--out", &path(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("exact");
    assert!(dir.join("trace-14.csv").exists());
    assert!(!dir.join("histogram-14.csv").exists());
}

#[test]
fn rerun_reports_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spinglass(&["exact", "--model", "field", "--n", "6", "--out", &path(tmp.path())]);
    assert_eq!(out.status.code(), Some(0));
    let manifest_path = tmp.path().join("exact").join("manifest.json");
    let mut m = manifest(&tmp.path().join("exact"));
    let files = m["files"].as_object_mut().unwrap();
    let key = files.keys().next().unwrap().clone();
    files.insert(key, serde_json::json!("0".repeat(64)));
    std::fs::write(&manifest_path, serde_json::to_vec(&m).unwrap()).unwrap();
    let out = spinglass(&["rerun", "--manifest", &path(&manifest_path), "--out", &path(&tmp.path().join("again"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch"));
}

#[test]
fn betas_range_syntax() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spinglass(&[
        "sample", "--model", "field", "--n", "8", "--betas", "0:1:0.25", "--sweeps", "200", "--thermo",
        "--out", &path(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("sample"));
    assert_eq!(m["config"]["betas"].as_array().unwrap().len(), 5);
}
