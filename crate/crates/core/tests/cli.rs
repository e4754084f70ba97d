use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stefan-homog")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).display().to_string()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_passes_on_the_stefan_config() {
    let out = tempfile::tempdir().unwrap();
    let o = bin(&["validate", "--config", &config("stefan_1d.json"), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.path().join("report.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(out.path().join("validation.json").exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = bin(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cell_reports_the_harmonic_mean() {
    let out = tempfile::tempdir().unwrap();
    let o = bin(&["cell", "--config", &config("harmonic_1d.json"), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.path().join("cell.json")).unwrap();
    let cell: serde_json::Value = serde_json::from_str(&text).unwrap();
    let k0 = find_number(&cell, "k0").expect("k0 in cell.json");
    assert!((k0 - 3f64.sqrt()).abs() < 1e-6, "k0 = {k0}");
}

#[test]
fn errors_leave_a_failure_record() {
    let out = tempfile::tempdir().unwrap();
    let bad = out.path().join("bad.json");
    std::fs::write(&bad, "{\"dimension\": 3}").unwrap();
    let dir = out.path().join("run");
    let o = bin(&["validate", "--config", bad.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let failure = read_json(&dir.join("failure.json"));
    assert_eq!(failure["command"], "validate");
    assert!(!failure["error"].as_str().unwrap().is_empty());
}

/// First number under `key`, searching depth first; arrays yield their first scalar.
fn find_number(v: &serde_json::Value, key: &str) -> Option<f64> {
    match v {
        serde_json::Value::Object(map) => {
            if let Some(x) = map.get(key) {
                let mut x = x;
                while let serde_json::Value::Array(a) = x {
                    x = a.first()?;
                }
                if let Some(n) = x.as_f64() {
                    return Some(n);
                }
            }
            map.values().find_map(|x| find_number(x, key))
        }
        serde_json::Value::Array(a) => a.iter().find_map(|x| find_number(x, key)),
        _ => None,
    }
}
