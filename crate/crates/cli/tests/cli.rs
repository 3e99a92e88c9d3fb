use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subshift"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn fixture(dir: &Path, name: &str) -> PathBuf {
    let out = run(dir, &["gen", "--fixture", name, "--out", &format!("{name}.json")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join(format!("{name}.json"))
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn pair4_audit_passes() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "pair4");
    let out = run(
        dir.path(),
        &["audit", "--instance", "pair4.json", "--mu", "0.1", "--hypothesis", "all", "--expansion", "mult:a=0.5"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["result"]["pass"], Value::Bool(true));
    assert_eq!(v["result"]["solve"]["chosen"], serde_json::json!([1, 1, 2, 2]));
    assert!(v["version"].is_string());
    assert_eq!(v["config"]["args"]["instance"], "pair4.json");
}

#[test]
fn audit_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "pair4");
    let out = run(dir.path(), &["audit", "--instance", "pair4.json", "--mu", "0.1", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    assert!(lines[1].starts_with("pair4,0,2,4,inf,"), "{}", lines[1]);
}

#[test]
fn false_expansion_claim_fails_the_audit() {
    // over ½(S+T) the chain's interior carries no mass, so nothing propagates
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "chain");
    let out = run(
        dir.path(),
        &["audit", "--instance", "chain.json", "--mu", "0.01", "--ref", "mixture", "--expansion", "mult:a=0.5,c=1.5"],
    );
    assert_eq!(out.status.code(), Some(2));
    let v = stdout_json(&out);
    assert_eq!(v["result"]["pass"], Value::Bool(false));
    assert_eq!(v["result"]["audit"]["certified"], Value::Bool(false));
}

#[test]
fn infeasible_solve_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "pair4");
    std::fs::write(dir.path().join("flip.json"), "[[1, 2, 2, 2]]").unwrap();
    let out = run(dir.path(), &["solve", "--instance", "pair4.json", "--mu", "0", "--hypothesis", "labelings:flip.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no feasible classifier") && err.contains("0.5"), "{err}");
}

#[test]
fn malformed_instance_names_the_json_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture(dir.path(), "pair4")).unwrap();
    let broken = text.replacen("\"label\": 1", "\"label\": \"one\"", 1);
    assert_ne!(broken, text);
    std::fs::write(dir.path().join("broken.json"), broken).unwrap();
    let out = run(dir.path(), &["validate", "--instance", "broken.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("components[0].label"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["audit", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["validate", "--instance", "missing.json"]).status.code(), Some(1));
    fixture(dir.path(), "pair4");
    let bad = run(dir.path(), &["audit", "--instance", "pair4.json", "--mu", "0.1", "--expansion", "mult:a=0.3"]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn gen_is_deterministic_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen", "--kind", "random_metric", "--m", "3", "--seed", "11"];
    let a = run(dir.path(), &args);
    let b = run(dir.path(), &args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    std::fs::write(dir.path().join("rm.json"), &a.stdout).unwrap();
    let v = run(dir.path(), &["validate", "--instance", "rm.json"]);
    assert!(v.status.success());
    let report = stdout_json(&v);
    assert_eq!(report["result"]["violations"], serde_json::json!([]));
}

#[test]
fn expansion_reports_chain_constant() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "chain");
    let out = run(dir.path(), &["expansion", "--instance", "chain.json"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["result"]["best"]["c"]["value"], serde_json::json!(1.5));
    assert_eq!(v["result"]["best"]["witness"], serde_json::json!([0, 1]));
    let bad = run(dir.path(), &["expansion", "--instance", "chain.json", "--expansion", "mult:a=0.5,c=2"]);
    let v = stdout_json(&bad);
    assert_eq!(v["result"]["report"]["satisfied"], Value::Bool(false));
    assert_eq!(v["result"]["report"]["witness"], serde_json::json!([0, 1]));
}

#[test]
fn margin_of_identity_net() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("id.json"), r#"{"p": 1, "dims": [2, 2], "weights": [[1, 0, 0, 1]]}"#).unwrap();
    let out = run(dir.path(), &["margin", "--net", "id.json", "--x", "1,0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = stdout_json(&out)["result"][0]["margin"]["value"].as_f64().unwrap();
    assert!((m - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
    let wrong = run(dir.path(), &["margin", "--net", "id.json", "--x", "1,0", "--y", "2"]);
    assert_eq!(stdout_json(&wrong)["result"][0]["margin"]["value"].as_f64(), Some(0.0));
}

#[test]
fn sweep_of_100_uda_seeds_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["sweep", "--kinds", "uda", "--seeds", "0..100", "--out", "rows.csv", "--summary", "s.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.contains("bound passes: 100/100"), "{line}");
    let rows = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 101);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(summary["passes"], serde_json::json!(100));
}

#[test]
fn sweep_bytes_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["sweep", "--kinds", "uda,random_metric,extrapolation", "--mu", "0.02,0.1", "--seeds", "0..8"];
    let mut outputs = Vec::new();
    for jobs in ["1", "1", "2", "5"] {
        for format in ["csv", "json"] {
            let mut args = base.to_vec();
            args.extend(["--jobs", jobs, "--format", format]);
            let out = run(dir.path(), &args);
            assert!(out.status.code() == Some(0) || out.status.code() == Some(2));
            outputs.push((format, out.stdout));
        }
    }
    for (format, bytes) in &outputs {
        let first = &outputs.iter().find(|(f, _)| f == format).unwrap().1;
        assert_eq!(bytes, first, "{format} output differs across --jobs");
    }
}

#[test]
fn sweep_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("spec.json"),
        r#"{"kinds": ["ssl"], "mu": [0.05], "seeds": [1, 2], "expansion": {"kind": "constant", "q": 0.2}}"#,
    )
    .unwrap();
    let out = run(dir.path(), &["sweep", "--config", "spec.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
    std::fs::write(dir.path().join("bad.json"), r#"{"kinds": ["ssl"], "mu": ["lots"]}"#).unwrap();
    let bad = run(dir.path(), &["sweep", "--config", "bad.json"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("mu[0]"));
}
