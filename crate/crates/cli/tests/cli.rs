use std::fs;
use std::process::{Command, Output};

fn suda(args: &[&str], env: &[(&str, &std::path::Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_suda"));
    cmd.args(args).env_remove("SUDA_OUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

const SUITE: &str = r#"
name = "tiny"
seeds = [1, 2]
[problem]
kind = "pl-toy"
sigma_h2 = 1.0
[defaults]
iterations = 100
sigma_n2 = 0.01
schedule = { kind = "constant", alpha = 0.01 }
[[runs]]
methods = ["ed", "dsgd"]
topologies = ["ring:8"]
"#;

#[test]
fn spectral_report_prints_json() {
    let out = suda(&["spectral-report", "ring:32", "atc-gt"], &[]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let lambda = v["lambda"].as_f64().unwrap();
    assert!((0.98..0.995).contains(&lambda));
    assert_eq!(suda(&["spectral-report", "ring:x", "ed"], &[]).status.code(), Some(2));
    assert_eq!(suda(&["spectral-report", "ring:8", "sgd"], &[]).status.code(), Some(2));
}

#[test]
fn run_and_compare_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = tmp.path().join("tiny.suite");
    fs::write(&suite, SUITE).unwrap();
    let out = suda(&["run", suite.to_str().unwrap(), "--jobs", "2"], &[("SUDA_OUT_DIR", tmp.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("tiny/summary.json").is_file());

    let spec = tmp.path().join("check.toml");
    fs::write(
        &spec,
        "[summaries]\ntiny = \"tiny/summary.json\"\n[[assert]]\nlhs = \"tiny:ed@ring_8.lambda\"\nop = \"in\"\nrange = [0.5, 1.0]\n",
    )
    .unwrap();
    let out = suda(&["compare", spec.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS"));

    fs::write(&spec, "[summaries]\ntiny = \"tiny/summary.json\"\n[[assert]]\nlhs = \"tiny:ed@ring_8.plateau.nope\"\nop = \"gt\"\nrhs = \"0\"\n")
        .unwrap();
    let out = suda(&["compare", spec.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("missing"));
}

#[test]
fn config_errors_exit_2_and_run_failures_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.suite");
    fs::write(&bad, SUITE.replace("seeds = [1, 2]", "seeds = [1, 2]\nbogus = true")).unwrap();
    let out = suda(&["run", bad.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    assert_eq!(suda(&["run", "no-such-suite"], &[]).status.code(), Some(2));

    let diverging = tmp.path().join("div.suite");
    fs::write(&diverging, SUITE.replace("alpha = 0.01", "alpha = 5.0")).unwrap();
    let out = suda(&["run", diverging.to_str().unwrap(), "--out", tmp.path().join("d").to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(tmp.path().join("d/summary.json").is_file());
}
