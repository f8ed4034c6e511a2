//! Metrics, the transformed consensus error and runtime monitors of the
//! descent and consensus inequalities.

mod monitors;
mod transform;
mod transient;

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Provenance;
use crate::solvers::{Algorithm, Form, StepSchedule};
use crate::spectral::{PsdShift, SpectralConstants};

pub use monitors::{
    consensus_bound, consensus_monitor, descent_bound, descent_monitor, Violation, DESCENT_SLACK,
};
pub use transform::{
    consensus_recursion_residual, heterogeneity_stats, transformed_error, transformed_error_with, HeterogeneityStats,
    NoiseRecord, StepSnapshot, TransformedError, RECURSION_TOL,
};
pub use transient::{transient_sensitivity, transient_time, TransientEstimate, DEFAULT_TRANSIENT_FACTOR};

/// Metrics at one recorded iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub k: usize,
    /// `‖∇f(x̄^k)‖²`.
    pub grad_norm_avg_sq: f64,
    /// `‖(1/n) Σ ∇f_i(x_i^k)‖²`.
    pub avg_grad_norm_sq: f64,
    /// `‖x^k − 𝟙 ⊗ x̄^k‖²`.
    pub consensus_sq: f64,
    /// `f(x̄^k) − f*`.
    pub subopt_avg: Option<f64>,
    /// `(1/n) Σ f(x_i^k) − f*`.
    pub subopt_mean: Option<f64>,
    pub e_hat_sq: Option<f64>,
    /// Left minus right side of the descent inequality for the step ending
    /// at `k`; positive values beyond [`DESCENT_SLACK`] are violations.
    pub descent_resid: Option<f64>,
    /// Distance between the directly computed `ê^k` and the one propagated
    /// through the transformed recursion from the previous step.
    pub recursion_resid: Option<f64>,
    /// Left minus right side of the consensus inequality for the step
    /// ending at `k`.
    pub consensus_resid: Option<f64>,
    /// Step size used from `k` to `k + 1`.
    pub alpha: f64,
    /// `f(x̄^k)`.
    pub f_avg: f64,
    pub wall_time: f64,
}

/// The spectral constants the monitors need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsSummary {
    pub gamma: f64,
    pub lambda_a: f64,
    pub lambda_b_under: f64,
    pub v1: f64,
    pub v2: f64,
    pub lambda_under: Option<f64>,
    pub upsilon: f64,
}

impl From<&SpectralConstants> for ConstantsSummary {
    fn from(sc: &SpectralConstants) -> Self {
        Self {
            gamma: sc.gamma,
            lambda_a: sc.lambda_a,
            lambda_b_under: sc.lambda_b_under,
            v1: sc.v1,
            v2: sc.v2,
            lambda_under: sc.lambda_under,
            upsilon: sc.upsilon(),
        }
    }
}

/// Time series of one run plus what is needed to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub label: String,
    pub algorithm: Algorithm,
    pub form: Form,
    pub topology: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub sigma_n2: f64,
    /// Mixing rate of the matrix actually used.
    pub lambda: f64,
    pub psd_shift: Option<PsdShift>,
    pub l_smooth: f64,
    pub f_star: Option<f64>,
    pub f_star_source: Option<Provenance>,
    pub schedule: StepSchedule,
    pub constants: Option<ConstantsSummary>,
    pub rows: Vec<RecordRow>,
}

impl RunRecord {
    pub fn last(&self) -> Option<&RecordRow> {
        self.rows.last()
    }

    pub fn series(&self, metric: Metric) -> Vec<(usize, f64)> {
        series_of(&self.rows, metric)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows_csv(&self.rows, path)
    }
}

/// Scalar metrics available for plateau and ordering checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    GradNormAvgSq,
    AvgGradNormSq,
    ConsensusSq,
    SuboptAvg,
    SuboptMean,
    EHatSq,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::GradNormAvgSq,
        Metric::AvgGradNormSq,
        Metric::ConsensusSq,
        Metric::SuboptAvg,
        Metric::SuboptMean,
        Metric::EHatSq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::GradNormAvgSq => "grad_norm_avg_sq",
            Metric::AvgGradNormSq => "avg_grad_norm_sq",
            Metric::ConsensusSq => "consensus_sq",
            Metric::SuboptAvg => "subopt_avg",
            Metric::SuboptMean => "subopt_mean",
            Metric::EHatSq => "e_hat_sq",
        }
    }

    pub fn of(self, row: &RecordRow) -> Option<f64> {
        match self {
            Metric::GradNormAvgSq => Some(row.grad_norm_avg_sq),
            Metric::AvgGradNormSq => Some(row.avg_grad_norm_sq),
            Metric::ConsensusSq => Some(row.consensus_sq),
            Metric::SuboptAvg => row.subopt_avg,
            Metric::SuboptMean => row.subopt_mean,
            Metric::EHatSq => row.e_hat_sq,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown metric '{s}'")))
    }
}

pub fn series_of(rows: &[RecordRow], metric: Metric) -> Vec<(usize, f64)> {
    rows.iter().filter_map(|r| metric.of(r).map(|v| (r.k, v))).collect()
}

/// Mean of the last 10% of the recorded values (at least one).
pub fn plateau(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let m = (values.len() / 10).max(1);
    let tail = &values[values.len() - m..];
    Some(tail.iter().sum::<f64>() / m as f64)
}

/// Seed average of records sharing the same recorded iterations.
///
/// Metrics are averaged; monitor residuals keep the worst seed. Optional
/// entries stay empty unless every seed has them.
pub fn mean_rows(records: &[&[RecordRow]]) -> Result<Vec<RecordRow>> {
    let first = records.first().ok_or_else(|| Error::InvalidInput("no records to average".into()))?;
    if records.iter().any(|r| r.len() != first.len() || r.iter().zip(first.iter()).any(|(a, b)| a.k != b.k)) {
        return Err(Error::InvalidInput("records differ in their recorded iterations".into()));
    }
    let m = records.len() as f64;
    let mean = |f: &dyn Fn(&RecordRow) -> f64, i: usize| records.iter().map(|r| f(&r[i])).sum::<f64>() / m;
    let mean_opt = |f: &dyn Fn(&RecordRow) -> Option<f64>, i: usize| {
        records.iter().map(|r| f(&r[i])).sum::<Option<f64>>().map(|s| s / m)
    };
    let worst = |f: &dyn Fn(&RecordRow) -> Option<f64>, i: usize| {
        records.iter().map(|r| f(&r[i])).collect::<Option<Vec<_>>>().map(|v| v.into_iter().fold(f64::MIN, f64::max))
    };
    Ok((0..first.len())
        .map(|i| RecordRow {
            k: first[i].k,
            grad_norm_avg_sq: mean(&|r| r.grad_norm_avg_sq, i),
            avg_grad_norm_sq: mean(&|r| r.avg_grad_norm_sq, i),
            consensus_sq: mean(&|r| r.consensus_sq, i),
            subopt_avg: mean_opt(&|r| r.subopt_avg, i),
            subopt_mean: mean_opt(&|r| r.subopt_mean, i),
            e_hat_sq: mean_opt(&|r| r.e_hat_sq, i),
            descent_resid: worst(&|r| r.descent_resid, i),
            recursion_resid: worst(&|r| r.recursion_resid, i),
            consensus_resid: worst(&|r| r.consensus_resid, i),
            alpha: mean(&|r| r.alpha, i),
            f_avg: mean(&|r| r.f_avg, i),
            wall_time: mean(&|r| r.wall_time, i),
        })
        .collect())
}

/// Column order of the per-run CSV files.
pub const CSV_COLUMNS: [&str; 10] = [
    "k",
    "grad_norm_avg_sq",
    "avg_grad_norm_sq",
    "consensus_sq",
    "subopt_avg",
    "subopt_mean",
    "e_hat_sq",
    "descent_resid",
    "recursion_resid",
    "alpha",
];

#[derive(Serialize, Deserialize)]
struct CsvRow {
    k: usize,
    grad_norm_avg_sq: f64,
    avg_grad_norm_sq: f64,
    consensus_sq: f64,
    subopt_avg: Option<f64>,
    subopt_mean: Option<f64>,
    e_hat_sq: Option<f64>,
    descent_resid: Option<f64>,
    recursion_resid: Option<f64>,
    alpha: f64,
}

impl From<&RecordRow> for CsvRow {
    fn from(r: &RecordRow) -> Self {
        Self {
            k: r.k,
            grad_norm_avg_sq: r.grad_norm_avg_sq,
            avg_grad_norm_sq: r.avg_grad_norm_sq,
            consensus_sq: r.consensus_sq,
            subopt_avg: r.subopt_avg,
            subopt_mean: r.subopt_mean,
            e_hat_sq: r.e_hat_sq,
            descent_resid: r.descent_resid,
            recursion_resid: r.recursion_resid,
            alpha: r.alpha,
        }
    }
}

/// Writes rows as CSV; missing optional values are empty cells.
pub fn write_rows<W: io::Write>(rows: &[RecordRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(CsvRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows_csv(rows: &[RecordRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_rows(rows, std::fs::File::create(path)?)
}

/// Reads a CSV written by [`write_rows`]. Columns that are not stored
/// (`f_avg`, wall time and the consensus residual) come back as zero or
/// empty.
pub fn read_rows_csv(path: &Path) -> Result<Vec<RecordRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_COLUMNS {
        return Err(Error::InvalidInput(format!("{}: unexpected columns {header:?}", path.display())));
    }
    r.deserialize::<CsvRow>()
        .map(|row| {
            let c = row?;
            Ok(RecordRow {
                k: c.k,
                grad_norm_avg_sq: c.grad_norm_avg_sq,
                avg_grad_norm_sq: c.avg_grad_norm_sq,
                consensus_sq: c.consensus_sq,
                subopt_avg: c.subopt_avg,
                subopt_mean: c.subopt_mean,
                e_hat_sq: c.e_hat_sq,
                descent_resid: c.descent_resid,
                recursion_resid: c.recursion_resid,
                consensus_resid: None,
                alpha: c.alpha,
                f_avg: 0.0,
                wall_time: 0.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, g: f64) -> RecordRow {
        RecordRow {
            k,
            grad_norm_avg_sq: g,
            avg_grad_norm_sq: g,
            consensus_sq: 0.0,
            subopt_avg: Some(g),
            subopt_mean: None,
            e_hat_sq: None,
            descent_resid: Some(-g),
            recursion_resid: None,
            consensus_resid: None,
            alpha: 0.1,
            f_avg: 1.0,
            wall_time: 0.0,
        }
    }

    #[test]
    fn plateau_uses_trailing_tenth() {
        let v: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(plateau(&v), Some(18.5));
        assert_eq!(plateau(&[3.0]), Some(3.0));
        assert_eq!(plateau(&[]), None);
    }

    #[test]
    fn csv_round_trip_keeps_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![row(0, 1.5), row(1, 0.25)];
        write_rows_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(text.lines().nth(1).unwrap(), "0,1.5,1.5,0.0,1.5,,,-1.5,,0.1");
        let back = read_rows_csv(&path).unwrap();
        assert_eq!(back[1].subopt_avg, Some(0.25));
        assert_eq!(back[1].e_hat_sq, None);
    }

    #[test]
    fn mean_over_seeds() {
        let a = vec![row(0, 1.0), row(5, 3.0)];
        let b = vec![row(0, 3.0), row(5, 5.0)];
        let m = mean_rows(&[&a, &b]).unwrap();
        assert_eq!(m[1].grad_norm_avg_sq, 4.0);
        assert_eq!(m[0].descent_resid, Some(-1.0));
        let c = vec![row(0, 1.0), row(6, 3.0)];
        assert!(mean_rows(&[&a, &c]).is_err());
    }

    #[test]
    fn metric_names() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }
}
