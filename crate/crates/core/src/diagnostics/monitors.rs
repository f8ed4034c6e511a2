use serde::Serialize;

use super::{ConstantsSummary, RecordRow, RunRecord};
use crate::error::{Error, Result};

/// Absolute slack of the descent check.
pub const DESCENT_SLACK: f64 = 1e-9;

/// An iteration `k` whose step to `k + 1` broke an inequality by `excess`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub k: usize,
    pub excess: f64,
}

/// Right side of the noise-free descent inequality for the step leaving `k`:
///
/// `f(x̄^k) − (α/2)‖∇f(x̄^k)‖² − (α/4)‖∇̄f(x^k)‖² + (αL²υ²v₁²/2n)‖ê^k‖²`.
pub fn descent_bound(row: &RecordRow, e_hat_sq: f64, l: f64, c: &ConstantsSummary, n: usize) -> f64 {
    let a = row.alpha;
    row.f_avg - a / 2.0 * row.grad_norm_avg_sq - a / 4.0 * row.avg_grad_norm_sq
        + a * l * l * c.upsilon * c.upsilon * c.v1 * c.v1 / (2.0 * n as f64) * e_hat_sq
}

/// Right side of the noise-free consensus inequality for the step leaving `k`:
///
/// `(γ + 2α²L²v₁²v₂²λ_a²/(1−γ))‖ê^k‖² + 2α⁴L²v₂²λ_a²n/(λ̲_b²(1−γ)υ²)‖∇̄f(x^k)‖²`.
pub fn consensus_bound(row: &RecordRow, e_hat_sq: f64, l: f64, c: &ConstantsSummary, n: usize) -> f64 {
    let a = row.alpha;
    let gap = 1.0 - c.gamma;
    let (l2, v1s, v2s, la2) = (l * l, c.v1 * c.v1, c.v2 * c.v2, c.lambda_a * c.lambda_a);
    (c.gamma + 2.0 * a * a * l2 * v1s * v2s * la2 / gap) * e_hat_sq
        + 2.0 * a.powi(4) * l2 * v2s * la2 * n as f64 / (c.lambda_b_under.powi(2) * gap * c.upsilon * c.upsilon)
            * row.avg_grad_norm_sq
}

fn scan(
    record: &RunRecord,
    what: &str,
    slack: impl Fn(f64) -> f64,
    excess: impl Fn(&RecordRow, f64, &RecordRow) -> Option<f64>,
) -> Result<Vec<Violation>> {
    if record.sigma_n2 > 0.0 {
        return Err(Error::NotApplicable(format!("the {what} inequality is only checked pathwise for exact gradients")));
    }
    let mut checked = 0;
    let mut out = Vec::new();
    for pair in record.rows.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.k != prev.k + 1 {
            continue;
        }
        let Some(e) = prev.e_hat_sq else { continue };
        let Some(x) = excess(prev, e, next) else { continue };
        checked += 1;
        if x > slack(e) {
            out.push(Violation { k: prev.k, excess: x });
        }
    }
    if checked == 0 && record.rows.len() > 1 {
        return Err(Error::Unavailable(format!(
            "the {what} inequality needs consecutive recorded iterations with the transformed error"
        )));
    }
    Ok(out)
}

/// Steps of a noise-free run that violate the descent inequality.
pub fn descent_monitor(record: &RunRecord, l: f64, c: &ConstantsSummary) -> Result<Vec<Violation>> {
    scan(record, "descent", |_| DESCENT_SLACK, |prev, e, next| Some(next.f_avg - descent_bound(prev, e, l, c, record.n)))
}

/// Steps of a noise-free run that violate the consensus inequality.
pub fn consensus_monitor(record: &RunRecord, l: f64, c: &ConstantsSummary) -> Result<Vec<Violation>> {
    scan(
        record,
        "consensus",
        |e| 1e-12 * (1.0 + e),
        |prev, e, next| next.e_hat_sq.map(|en| en - consensus_bound(prev, e, l, c, record.n)),
    )
}
