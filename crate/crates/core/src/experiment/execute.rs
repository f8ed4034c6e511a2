use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::suite::ExperimentSuite;
use crate::diagnostics::{mean_rows, plateau, write_rows_csv, Metric, RecordRow, RunRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::problems::ProblemSpec;
use crate::solvers::{run_with, Algorithm, RunContext};
use crate::spectral::{spectral_report, PsdShift};

/// Version of the `summary.json` layout.
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default parent of suite output directories.
pub const OUT_DIR_ENV: &str = "SUDA_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

/// Seed-averaged results of one suite entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub id: String,
    pub method: Algorithm,
    pub topology: String,
    pub n: usize,
    /// Mixing rate of the topology as specified.
    pub topology_lambda: Option<f64>,
    /// Mixing rate of the matrix the method ran on, after any PSD shift.
    pub lambda: Option<f64>,
    pub psd_shift: Option<PsdShift>,
    pub alpha0: Option<f64>,
    pub l_smooth: Option<f64>,
    pub f_star: Option<f64>,
    pub status: Status,
    pub failures: Vec<SeedFailure>,
    /// Mean of the last tenth of the seed-averaged curve, per metric.
    pub plateau: BTreeMap<String, f64>,
    /// Last value of the seed-averaged curve, per metric.
    #[serde(rename = "final")]
    pub final_value: BTreeMap<String, f64>,
    /// Plateau of each seed's own curve, in suite seed order.
    pub seed_plateau: BTreeMap<String, Vec<f64>>,
}

impl EntrySummary {
    pub fn plateau(&self, metric: Metric) -> Option<f64> {
        self.plateau.get(metric.name()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub suite: String,
    pub seeds: Vec<u64>,
    pub problem: ProblemSpec,
    pub status: Status,
    pub entries: Vec<EntrySummary>,
}

impl Summary {
    pub fn entry(&self, id: &str) -> Option<&EntrySummary> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s: Summary = serde_json::from_str(&fs::read_to_string(path)?)?;
        if s.schema_version != SUMMARY_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "{}: summary schema {} (expected {SUMMARY_SCHEMA_VERSION})",
                path.display(),
                s.schema_version
            )));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct ExecuteOptions {
    pub out: PathBuf,
    /// Concurrent runs; `None` lets the thread pool decide.
    pub jobs: Option<usize>,
    /// Keep the per-seed records in the outcome.
    pub keep_records: bool,
}

impl ExecuteOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into(), jobs: None, keep_records: false }
    }
}

#[derive(Debug)]
pub struct SuiteOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
    /// `(entry id, record)` per successful run, when requested.
    pub records: Vec<(String, RunRecord)>,
}

impl SuiteOutcome {
    pub fn failed_runs(&self) -> usize {
        self.summary.entries.iter().map(|e| e.failures.len()).sum()
    }
}

/// Output directory: `explicit`, else the suite's own `output`, else
/// `$SUDA_OUT_DIR/<name>`, else `suda-out/<name>`.
pub fn resolve_output_dir(suite: &ExperimentSuite, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = &suite.output {
        return p.clone();
    }
    let parent = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("suda-out"));
    parent.join(&suite.name)
}

/// Runs every (entry, seed) pair and writes
///
/// ```text
/// <out>/runs/<id>/seed-<s>.csv
/// <out>/mean/<id>.csv
/// <out>/spectral/<method>@<topology>.json
/// <out>/summary.json
/// <out>/cache/
/// ```
///
/// A failed run does not stop the others; it is listed in the summary and
/// the entry's status becomes `failed`.
pub fn execute_suite(suite: &ExperimentSuite, opts: &ExecuteOptions) -> Result<SuiteOutcome> {
    let out = &opts.out;
    let cache = out.join("cache");
    for sub in ["runs", "mean", "spectral"] {
        fs::create_dir_all(out.join(sub))?;
    }
    fs::create_dir_all(&cache)?;

    let mut contexts: BTreeMap<usize, RunContext> = BTreeMap::new();
    for e in &suite.entries {
        let n = e.config.topology.n();
        if let std::collections::btree_map::Entry::Vacant(slot) = contexts.entry(n) {
            slot.insert(RunContext::prepare(&suite.problem, n, Some(&cache))?);
        }
    }

    let mut topology_lambda = BTreeMap::new();
    for e in &suite.entries {
        let t = &e.config.topology;
        topology_lambda.entry(t.to_string()).or_insert_with(|| t.build().ok().map(|w| w.mixing_rate()));
        if let Some(m) = e.config.method.method() {
            let path = out.join("spectral").join(format!("{m}@{}.json", t.file_stem()));
            let json = match spectral_report(t, m) {
                Ok(r) => serde_json::to_string_pretty(&r)?,
                Err(err) => serde_json::to_string_pretty(&serde_json::json!({ "error": err.to_string() }))?,
            };
            fs::write(path, json + "\n")?;
        }
    }

    let jobs: Vec<(usize, u64)> =
        (0..suite.entries.len()).flat_map(|i| suite.seeds.iter().map(move |&s| (i, s))).collect();
    let workers = opts.jobs.unwrap_or(0);
    let (outer, inner) =
        if workers == 1 { (Execution::Sequential, Execution::Parallel) } else { (Execution::Parallel, Execution::Sequential) };
    let run_one = |&(i, seed): &(usize, u64)| -> std::result::Result<RunRecord, String> {
        let entry = &suite.entries[i];
        let mut cfg = entry.config.clone();
        cfg.seed = seed;
        let ctx = &contexts[&cfg.topology.n()];
        let rec = run_with(&cfg, ctx, inner).map_err(|e| e.to_string())?;
        let dir = out.join("runs").join(&entry.id);
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        rec.write_csv(&dir.join(format!("seed-{seed}.csv"))).map_err(|e| e.to_string())?;
        Ok(rec)
    };
    let results = in_pool(workers, || outer.map_slice(&jobs, run_one))?;

    let mut results = results.into_iter();
    let mut entries = Vec::with_capacity(suite.entries.len());
    let mut kept = Vec::new();
    for e in &suite.entries {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for &seed in &suite.seeds {
            match results.next().expect("one result per job") {
                Ok(r) => records.push(r),
                Err(message) => failures.push(SeedFailure { seed, message }),
            }
        }
        let mut summary = EntrySummary {
            id: e.id.clone(),
            method: e.config.method,
            topology: e.config.topology.to_string(),
            n: e.config.topology.n(),
            topology_lambda: topology_lambda[&e.config.topology.to_string()],
            lambda: records.first().map(|r| r.lambda),
            psd_shift: records.first().and_then(|r| r.psd_shift),
            alpha0: records.first().map(|r| r.schedule.alpha0),
            l_smooth: records.first().map(|r| r.l_smooth),
            f_star: records.first().and_then(|r| r.f_star),
            status: if failures.is_empty() { Status::Ok } else { Status::Failed },
            failures,
            plateau: BTreeMap::new(),
            final_value: BTreeMap::new(),
            seed_plateau: BTreeMap::new(),
        };
        if summary.status == Status::Ok {
            let rows: Vec<&[RecordRow]> = records.iter().map(|r| r.rows.as_slice()).collect();
            let mean = mean_rows(&rows)?;
            write_rows_csv(&mean, &out.join("mean").join(format!("{}.csv", e.id)))?;
            for metric in Metric::ALL {
                let values: Vec<f64> = mean.iter().filter_map(|r| metric.of(r)).collect();
                let (Some(p), Some(&last)) = (plateau(&values), values.last()) else { continue };
                summary.plateau.insert(metric.name().into(), p);
                summary.final_value.insert(metric.name().into(), last);
                let per_seed: Option<Vec<f64>> = records
                    .iter()
                    .map(|r| plateau(&r.rows.iter().filter_map(|row| metric.of(row)).collect::<Vec<_>>()))
                    .collect();
                if let Some(v) = per_seed {
                    summary.seed_plateau.insert(metric.name().into(), v);
                }
            }
        }
        if opts.keep_records {
            kept.extend(records.into_iter().map(|r| (e.id.clone(), r)));
        }
        entries.push(summary);
    }

    let status = if entries.iter().all(|e| e.status == Status::Ok) { Status::Ok } else { Status::Failed };
    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        suite: suite.name.clone(),
        seeds: suite.seeds.clone(),
        problem: suite.problem.clone(),
        status,
        entries,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(SuiteOutcome { dir: out.clone(), summary, records: kept })
}

#[cfg(feature = "parallel")]
fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn in_pool<T: Send>(_workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}
