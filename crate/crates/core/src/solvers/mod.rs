//! Primal-dual updates, the published explicit recursions and the DSGD /
//! parallel SGD baselines.
//!
//! States are stored agent-major: column `i` of a `d × n` matrix holds agent
//! `i`'s vector, so applying `W ⊗ I_d` is the product `X W` (every method
//! matrix is symmetric).

mod run;
mod schedule;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::GradOracle;
use crate::spectral::{Method, MethodMatrices};
use crate::topology::CombinationMatrix;

pub use run::{run, run_with, Form, RunConfig, RunContext};
pub use schedule::{ScheduleSpec, StepSchedule, TheoremParameters};

/// Divergence threshold on `‖x‖_∞`.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Any algorithm the runner can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Suda(Method),
    Dsgd,
    Psgd,
}

impl Algorithm {
    pub fn method(self) -> Option<Method> {
        match self {
            Algorithm::Suda(m) => Some(m),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Suda(m) => m.fmt(f),
            Algorithm::Dsgd => f.write_str("dsgd"),
            Algorithm::Psgd => f.write_str("psgd"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dsgd" => Ok(Algorithm::Dsgd),
            "psgd" => Ok(Algorithm::Psgd),
            other => other.parse().map(Algorithm::Suda).map_err(|_| {
                Error::InvalidParameter(format!(
                    "unknown method '{s}' (expected dsgd, psgd, ed, extra, atc-gt, nonatc-gt, semi-atc-gt-x or semi-atc-gt-g)"
                ))
            }),
        }
    }
}

impl Serialize for Algorithm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Algorithm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Iterates of all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// Primal iterates, `d × n`.
    pub x: DMatrix<f64>,
    /// Dual iterates of the primal-dual form, `d × n`.
    pub y: DMatrix<f64>,
    /// Gradient trackers of the explicit tracking recursions.
    pub g: Option<DMatrix<f64>>,
    /// Previous iterate of the two-step explicit recursions.
    pub x_prev: Option<DMatrix<f64>>,
    /// Stochastic gradient used at the previous explicit step.
    pub grad_prev: Option<DMatrix<f64>>,
    pub k: usize,
}

impl NetworkState {
    /// State with primal iterates `x` (`d × n`) and `y⁰ = 0`.
    pub fn new(x: DMatrix<f64>) -> Self {
        let y = DMatrix::zeros(x.nrows(), x.ncols());
        Self { x, y, g: None, x_prev: None, grad_prev: None, k: 0 }
    }

    /// Every agent starts at `x0`.
    pub fn consensual(n: usize, x0: &DVector<f64>) -> Self {
        Self::new(DMatrix::from_fn(x0.len(), n, |r, _| x0[r]))
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    /// `x̄ = (1/n) Σ x_i`.
    pub fn average(&self) -> DVector<f64> {
        self.x.column_mean()
    }

    /// `‖x − 𝟙 ⊗ x̄‖²`.
    pub fn consensus_error_sq(&self) -> f64 {
        let xbar = self.average();
        self.x.column_iter().map(|c| (c - &xbar).norm_squared()).sum()
    }

    pub fn is_consensual(&self, tol: f64) -> bool {
        let xbar = self.average();
        self.x.column_iter().all(|c| (c - &xbar).amax() <= tol * (1.0 + xbar.amax()))
    }

    fn check(&self, n: usize, d: usize) -> Result<()> {
        if self.x.shape() != (d, n) || self.y.shape() != (d, n) {
            return Err(Error::InvalidState(format!(
                "state is {}x{} (agents x dims) but the problem and network need {n}x{d}",
                self.x.ncols(),
                self.x.nrows()
            )));
        }
        Ok(())
    }
}

fn check_oracle(state: &NetworkState, oracle: &GradOracle<'_>, n: usize) -> Result<()> {
    let p = oracle.problem();
    if p.n() != n {
        return Err(Error::InvalidState(format!("problem has {} agents, network has {n}", p.n())));
    }
    state.check(n, p.d())
}

/// Fails with the iteration index when an iterate leaves the finite range.
pub fn divergence_guard(x: &DMatrix<f64>, iteration: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        return Err(Error::NumericOverflow { iteration });
    }
    Ok(())
}

/// Primal-dual update with pre-computed stochastic gradients `grads`.
pub fn suda_update(state: &NetworkState, mm: &MethodMatrices, alpha: f64, grads: &DMatrix<f64>) -> Result<NetworkState> {
    state.check(mm.a.nrows(), state.d())?;
    if grads.shape() != state.x.shape() {
        return Err(Error::InvalidState("gradient block does not match the state".into()));
    }
    let inner = &state.x * &mm.c - grads * alpha;
    let x = inner * &mm.a - &state.y * &mm.b;
    let y = &state.y + &x * &mm.b;
    Ok(NetworkState { x, y, g: None, x_prev: None, grad_prev: None, k: state.k + 1 })
}

/// `x^{k+1} = A(Cx^k − α∇F(x^k, ξ^k)) − By^k`, `y^{k+1} = y^k + Bx^{k+1}`.
pub fn suda_step(state: &NetworkState, mm: &MethodMatrices, alpha: f64, oracle: &GradOracle<'_>) -> Result<NetworkState> {
    check_oracle(state, oracle, mm.a.nrows())?;
    let grads = oracle.evaluate(&state.x, state.k).stochastic();
    suda_update(state, mm, alpha, &grads)
}

/// One step of the method's published recursion, including its special
/// first step and tracker initialization.
///
/// The tracking recursions match [`suda_step`] only from a consensual `x⁰`;
/// the diffusion pair matches from any start.
pub fn explicit_step(
    method: Method,
    state: &NetworkState,
    w: &CombinationMatrix,
    alpha: f64,
    oracle: &GradOracle<'_>,
) -> Result<NetworkState> {
    if method.requires_psd() && !w.is_psd() {
        return Err(Error::RequiresPsd { method: method.to_string(), min_eig: w.min_eigenvalue() });
    }
    check_oracle(state, oracle, w.n())?;
    let wm = w.matrix();
    let k = state.k;
    let x = &state.x;
    let mut next = NetworkState::new(DMatrix::zeros(x.nrows(), x.ncols()));
    next.k = k + 1;
    match method {
        Method::ExactDiffusion | Method::Extra => {
            let grad = oracle.evaluate(x, k).stochastic();
            let new_x = match (&state.x_prev, &state.grad_prev) {
                (Some(xp), Some(gp)) => {
                    let diff = (&grad - gp) * alpha;
                    if method == Method::ExactDiffusion {
                        (x * 2.0 - xp - diff) * wm
                    } else {
                        (x * 2.0 - xp) * wm - diff
                    }
                }
                _ if method == Method::ExactDiffusion => (x - &grad * alpha) * wm,
                _ => x * wm - &grad * alpha,
            };
            next.x = new_x;
            next.x_prev = Some(x.clone());
            next.grad_prev = Some(grad);
        }
        Method::AtcGt | Method::NonAtcGt | Method::SemiAtcGtX | Method::SemiAtcGtG => {
            let combine_x = matches!(method, Method::AtcGt | Method::SemiAtcGtX);
            let combine_g = matches!(method, Method::AtcGt | Method::SemiAtcGtG);
            let (g, grad) = match (&state.g, &state.grad_prev) {
                (Some(g), Some(gp)) => (g.clone(), gp.clone()),
                _ => {
                    let grad = oracle.evaluate(x, k).stochastic();
                    let g = if combine_g { &grad * wm } else { grad.clone() };
                    (g, grad)
                }
            };
            let new_x = if combine_x { (x - &g * alpha) * wm } else { x * wm - &g * alpha };
            let new_grad = oracle.evaluate(&new_x, k + 1).stochastic();
            let new_g = if combine_g { (&g + &new_grad - &grad) * wm } else { &g * wm + &new_grad - &grad };
            next.x = new_x;
            next.g = Some(new_g);
            next.grad_prev = Some(new_grad);
        }
    }
    Ok(next)
}

/// DSGD update with pre-computed stochastic gradients.
pub fn dsgd_update(state: &NetworkState, w: &CombinationMatrix, alpha: f64, grads: &DMatrix<f64>) -> Result<NetworkState> {
    state.check(w.n(), state.d())?;
    let x = (&state.x - grads * alpha) * w.matrix();
    let mut next = NetworkState::new(x);
    next.k = state.k + 1;
    Ok(next)
}

/// `x^{k+1} = W(x^k − α ∇F(x^k, ξ^k))`.
pub fn dsgd_step(state: &NetworkState, w: &CombinationMatrix, alpha: f64, oracle: &GradOracle<'_>) -> Result<NetworkState> {
    check_oracle(state, oracle, w.n())?;
    let grads = oracle.evaluate(&state.x, state.k).stochastic();
    dsgd_update(state, w, alpha, &grads)
}

/// Parallel SGD update from the stochastic gradients of every agent at `x̄`.
pub fn psgd_update(state: &NetworkState, alpha: f64, grads_at_avg: &DMatrix<f64>) -> NetworkState {
    let xbar = state.average() - grads_at_avg.column_mean() * alpha;
    let mut next = NetworkState::consensual(state.n(), &xbar);
    next.k = state.k + 1;
    next
}

/// `x̄^{k+1} = x̄^k − (α/n) Σ ∇F_i(x̄^k, ξ_i^k)`, broadcast to every agent.
pub fn psgd_step(state: &NetworkState, alpha: f64, oracle: &GradOracle<'_>) -> Result<NetworkState> {
    check_oracle(state, oracle, state.n())?;
    let grads = oracle.evaluate_at(&state.average(), state.k).stochastic();
    Ok(psgd_update(state, alpha, &grads))
}
