use std::fs;
use std::path::Path;

use suda_core::diagnostics::{mean_rows, read_rows_csv, RecordRow};
use suda_core::experiment::{execute_suite, ExecuteOptions, ExperimentSuite, Status, Summary};
use suda_core::solvers::{run_with, RunContext};
use suda_core::Execution;

const SUITE: &str = r#"
name = "small"
seeds = [1, 2]

[problem]
kind = "pl-toy"
sigma_h2 = 1.0

[defaults]
iterations = 200
sigma_n2 = 0.01
x0 = 1.0
schedule = { kind = "constant", alpha = 0.01 }

[[runs]]
methods = ["ed", "atc-gt", "dsgd", "psgd"]
topologies = ["ring:8"]
"#;

fn suite(text: &str) -> ExperimentSuite {
    ExperimentSuite::parse(text, "test").unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["runs", "mean"] {
        let mut stack = vec![dir.join(sub)];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
                }
            }
        }
    }
    out.sort();
    out
}

#[test]
fn rerun_produces_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let s = suite(SUITE);
    let a = execute_suite(&s, &ExecuteOptions::new(tmp.path().join("a"))).unwrap();
    let b = execute_suite(&s, &ExecuteOptions { jobs: Some(1), ..ExecuteOptions::new(tmp.path().join("b")) }).unwrap();
    assert_eq!(a.summary, b.summary);
    let (fa, fb) = (files(&tmp.path().join("a")), files(&tmp.path().join("b")));
    assert_eq!(fa.len(), 4 * 2 + 4);
    assert_eq!(fa, fb);
    let summary_a = fs::read(tmp.path().join("a/summary.json")).unwrap();
    assert_eq!(summary_a, fs::read(tmp.path().join("b/summary.json")).unwrap());
}

#[test]
fn artifacts_and_summary_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let out = execute_suite(&suite(SUITE), &ExecuteOptions::new(tmp.path())).unwrap();
    assert_eq!(out.summary.status, Status::Ok);
    for f in ["summary.json", "runs/ed@ring_8/seed-2.csv", "mean/psgd@ring_8.csv", "spectral/ed@ring_8.json", "spectral/atc-gt@ring_8.json"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let header = fs::read_to_string(tmp.path().join("mean/ed@ring_8.csv")).unwrap();
    assert!(header.starts_with(
        "k,grad_norm_avg_sq,avg_grad_norm_sq,consensus_sq,subopt_avg,subopt_mean,e_hat_sq,descent_resid,recursion_resid,alpha\n"
    ));
    let read = Summary::read(&tmp.path().join("summary.json")).unwrap();
    assert_eq!(read, out.summary);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert!(json["entries"][0]["plateau"]["grad_norm_avg_sq"].is_number());
    let ed = read.entry("ed@ring_8").unwrap();
    assert_eq!(ed.seed_plateau["subopt_avg"].len(), 2);
    assert!(ed.psd_shift.is_some() && ed.lambda > ed.topology_lambda);
}

#[test]
fn mean_csv_is_the_seed_average() {
    let tmp = tempfile::tempdir().unwrap();
    execute_suite(&suite(SUITE), &ExecuteOptions::new(tmp.path())).unwrap();
    let seeds: Vec<Vec<RecordRow>> =
        [1, 2].iter().map(|s| read_rows_csv(&tmp.path().join(format!("runs/dsgd@ring_8/seed-{s}.csv"))).unwrap()).collect();
    let refs: Vec<&[RecordRow]> = seeds.iter().map(Vec::as_slice).collect();
    let mean = mean_rows(&refs).unwrap();
    let stored = read_rows_csv(&tmp.path().join("mean/dsgd@ring_8.csv")).unwrap();
    assert_eq!(mean.len(), stored.len());
    for (a, b) in mean.iter().zip(&stored) {
        assert_eq!(a.k, b.k);
        assert!((a.grad_norm_avg_sq - b.grad_norm_avg_sq).abs() <= 1e-15 * (1.0 + a.grad_norm_avg_sq));
    }
}

#[test]
fn aborted_run_keeps_partial_artifacts() {
    let text = format!(
        "{SUITE}\n[[runs]]\nid = \"bad\"\nmethods = [\"dsgd\"]\ntopologies = [\"ring:8\"]\nschedule = {{ kind = \"constant\", alpha = 5.0 }}\n"
    );
    let tmp = tempfile::tempdir().unwrap();
    let out = execute_suite(&suite(&text), &ExecuteOptions::new(tmp.path())).unwrap();
    assert_eq!(out.summary.status, Status::Failed);
    assert_eq!(out.failed_runs(), 2);
    let bad = out.summary.entry("bad-dsgd@ring_8").unwrap();
    assert!(bad.failures[0].message.contains("diverged"), "{}", bad.failures[0].message);
    assert!(bad.plateau.is_empty());
    assert!(tmp.path().join("runs/ed@ring_8/seed-1.csv").is_file());
    assert!(!tmp.path().join("mean/bad-dsgd@ring_8.csv").exists());
}

#[test]
fn sequential_and_parallel_execution_agree() {
    let s = suite(&SUITE.replace("pl-toy", "logistic").replace("sigma_h2 = 1.0", "sigma_h2 = 0.5\nd = 5\nsamples = 50"));
    let mut cfg = s.entries[1].config.clone();
    cfg.seed = 3;
    let ctx = RunContext::prepare(&s.problem, 8, None).unwrap();
    let strip = |mut rows: Vec<RecordRow>| {
        rows.iter_mut().for_each(|r| r.wall_time = 0.0);
        rows
    };
    let a = run_with(&cfg, &ctx, Execution::Sequential).unwrap();
    let b = run_with(&cfg, &ctx, Execution::Parallel).unwrap();
    assert_eq!(strip(a.rows), strip(b.rows));
}
