use nalgebra::{DMatrix, Vector2};
use num_complex::Complex64;
use serde::Serialize;

use super::RecordRow;
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::solvers::NetworkState;
use crate::spectral::{MethodMatrices, SpectralConstants};
use crate::topology::CombinationMatrix;

type C = Complex64;

/// Tolerance factor of the transformed-recursion identity,
/// `residual ≤ RECURSION_TOL · (1 + ‖ê^{k+1}‖)`.
pub const RECURSION_TOL: f64 = 1e-8;

/// `ê = (1/υ) V̂⁻¹ [Ûᵀx; Λ̂_b⁻¹Ûᵀs]`, stored per block: column `i` of `top`
/// and `bottom` holds the two `d`-vectors of block `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedError {
    pub top: DMatrix<C>,
    pub bottom: DMatrix<C>,
    /// `‖Ûᵀx‖²`.
    pub ux_sq: f64,
    /// `‖Λ̂_b⁻¹Ûᵀs‖²`.
    pub us_sq: f64,
    pub upsilon: f64,
}

impl TransformedError {
    /// `‖ê‖²`.
    pub fn norm_sq(&self) -> f64 {
        self.top.iter().chain(self.bottom.iter()).map(C::norm_sqr).sum()
    }

    /// `υ²‖V̂ê‖²`, which equals `‖Ûᵀx‖² + ‖Λ̂_b⁻¹Ûᵀs‖²`.
    pub fn reconstructed_sq(&self, sc: &SpectralConstants) -> f64 {
        let mut acc = 0.0;
        for (i, b) in sc.blocks.iter().enumerate() {
            for j in 0..self.top.nrows() {
                let v = b.v * Vector2::new(self.top[(j, i)], self.bottom[(j, i)]);
                acc += v.norm_squared();
            }
        }
        self.upsilon * self.upsilon * acc
    }
}

fn check_artifacts(state: &NetworkState, mm: &MethodMatrices, sc: &SpectralConstants, u_hat: &DMatrix<f64>) -> Result<()> {
    let n = state.n();
    if sc.method != mm.method {
        return Err(Error::InvalidInput(format!(
            "spectral constants belong to {} but the matrices to {}",
            sc.method, mm.method
        )));
    }
    if sc.n != n || mm.a.nrows() != n || u_hat.shape() != (n, n - 1) || sc.blocks.len() != n - 1 {
        return Err(Error::InvalidInput(format!("spectral artifacts do not match a network of {n} agents")));
    }
    Ok(())
}

/// [`transformed_error`] with `Û` and the per-agent gradients at `x̄`
/// (`d × n`) supplied by the caller.
pub fn transformed_error_with(
    state: &NetworkState,
    mm: &MethodMatrices,
    sc: &SpectralConstants,
    u_hat: &DMatrix<f64>,
    gbar: &DMatrix<f64>,
    alpha: f64,
) -> Result<TransformedError> {
    check_artifacts(state, mm, sc, u_hat)?;
    if gbar.shape() != state.x.shape() {
        return Err(Error::InvalidInput("gradient block at the average has the wrong shape".into()));
    }
    let z = &state.y - &state.x * &mm.b;
    let s = &z * &mm.b + gbar * &mm.a * alpha;
    let xu = &state.x * u_hat;
    let su = s * u_hat;
    let upsilon = sc.upsilon();
    let d = state.d();
    let m = sc.blocks.len();
    let mut top = DMatrix::zeros(d, m);
    let mut bottom = DMatrix::zeros(d, m);
    let mut us_sq = 0.0;
    for (i, b) in sc.blocks.iter().enumerate() {
        let lb = b.block.lambda_b;
        for j in 0..d {
            let q = su[(j, i)] / lb;
            us_sq += q * q;
            let e = b.v_inv * Vector2::new(C::new(xu[(j, i)], 0.0), C::new(q, 0.0)) / C::new(upsilon, 0.0);
            top[(j, i)] = e[0];
            bottom[(j, i)] = e[1];
        }
    }
    Ok(TransformedError { top, bottom, ux_sq: xu.norm_squared(), us_sq, upsilon })
}

/// Transformed consensus error of `state`.
///
/// Fails with `InvalidInput` when `mm`, `sc` and `w` do not describe the
/// same method on the same matrix.
pub fn transformed_error(
    state: &NetworkState,
    mm: &MethodMatrices,
    sc: &SpectralConstants,
    w: &CombinationMatrix,
    problem: &Problem,
    alpha: f64,
) -> Result<TransformedError> {
    let eig = &w.eigenvalues()[1..];
    if eig.len() != sc.blocks.len() || eig.iter().zip(&sc.blocks).any(|(l, b)| (l - b.block.lambda).abs() > 1e-9) {
        return Err(Error::InvalidInput("spectral constants were computed for a different combination matrix".into()));
    }
    if problem.n() != state.n() || problem.d() != state.d() {
        return Err(Error::InvalidInput("problem does not match the state".into()));
    }
    let xbar = state.average();
    let gbar = problem.stacked_grads(&DMatrix::from_fn(state.d(), state.n(), |r, _| xbar[r]));
    transformed_error_with(state, mm, sc, &w.u_hat(), &gbar, alpha)
}

/// How the noise of a recorded step is available.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseRecord {
    /// Gradients were exact.
    Exact,
    Retained(DMatrix<f64>),
    Discarded,
}

/// Everything about iteration `k` needed to check the step to `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSnapshot {
    pub k: usize,
    pub alpha: f64,
    pub e: TransformedError,
    /// Exact gradients at the agents' iterates.
    pub grads: DMatrix<f64>,
    pub noise: NoiseRecord,
    /// Gradients of every agent at `x̄^k`.
    pub gbar: DMatrix<f64>,
    /// Metrics at `k`, whether or not `k` itself is recorded.
    pub row: RecordRow,
}

/// `‖ê^{k+1} − (Γê^k − (α/υ)V̂⁻¹[Λ̂_aÛᵀ(∇F(x^k) − ∇f(x̄^k)); Λ̂_b⁻¹Λ̂_aÛᵀ(∇f(x̄^k) − ∇f(x̄^{k+1}))])‖`.
///
/// `after` is `ê^{k+1}` computed directly and `gbar_next` holds the
/// per-agent gradients at `x̄^{k+1}`.
pub fn consensus_recursion_residual(
    before: &StepSnapshot,
    after: &TransformedError,
    gbar_next: &DMatrix<f64>,
    sc: &SpectralConstants,
    u_hat: &DMatrix<f64>,
) -> Result<f64> {
    let stochastic = match &before.noise {
        NoiseRecord::Exact => before.grads.clone(),
        NoiseRecord::Retained(w) => &before.grads + w,
        NoiseRecord::Discarded => {
            return Err(Error::Unavailable("noise of the recorded step was not retained".into()));
        }
    };
    if after.top.shape() != before.e.top.shape() || (after.upsilon - before.e.upsilon).abs() > 0.0 {
        return Err(Error::InvalidInput("transformed errors come from different spectral artifacts".into()));
    }
    let du = (stochastic - &before.gbar) * u_hat;
    let dg = (&before.gbar - gbar_next) * u_hat;
    let scale = C::new(before.alpha / before.e.upsilon, 0.0);
    let mut acc = 0.0;
    for (i, b) in sc.blocks.iter().enumerate() {
        let (la, lb) = (b.block.lambda_a, b.block.lambda_b);
        for j in 0..du.nrows() {
            let e = Vector2::new(before.e.top[(j, i)], before.e.bottom[(j, i)]);
            let bracket = Vector2::new(C::new(la * du[(j, i)], 0.0), C::new(la / lb * dg[(j, i)], 0.0));
            let pred = b.gamma * e - b.v_inv * bracket * scale;
            acc += (after.top[(j, i)] - pred[0]).norm_sqr() + (after.bottom[(j, i)] - pred[1]).norm_sqr();
        }
    }
    Ok(acc.sqrt())
}

/// Initial heterogeneity measures at a consensual `x⁰`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeterogeneityStats {
    /// `(1/n) Σ ‖∇f_i(x⁰) − ∇f(x⁰)‖²`.
    pub varsigma0_sq: f64,
    /// `(1/n) ‖(A − J)(∇f(x⁰) − 𝟙 ⊗ ∇f(x⁰))‖²`.
    pub zeta0_sq: f64,
    /// `‖A − J‖`.
    pub lambda_a: f64,
    /// `λ_a² ς₀²`.
    pub bound: f64,
    pub holds: bool,
}

/// `ς₀²`, `ζ₀²` and the check `ζ₀² ≤ λ_a² ς₀²`.
///
/// `x0` is `d × n` and must be consensual.
pub fn heterogeneity_stats(problem: &Problem, x0: &DMatrix<f64>, mm: &MethodMatrices) -> Result<HeterogeneityStats> {
    let n = problem.n();
    if x0.shape() != (problem.d(), n) || mm.a.nrows() != n {
        return Err(Error::InvalidInput("initial point, problem and matrices disagree in size".into()));
    }
    let state = NetworkState::new(x0.clone());
    if !state.is_consensual(1e-12) {
        return Err(Error::InvalidInput("heterogeneity statistics need a consensual initial point".into()));
    }
    let g = problem.stacked_grads(x0);
    let mean = g.column_mean();
    let dev = DMatrix::from_fn(g.nrows(), n, |r, c| g[(r, c)] - mean[r]);
    let a_minus_j = mm.a.map(|v| v - 1.0 / n as f64);
    let varsigma0_sq = dev.norm_squared() / n as f64;
    let zeta0_sq = (&dev * &a_minus_j).norm_squared() / n as f64;
    let lambda_a = a_minus_j.symmetric_eigenvalues().amax();
    let bound = lambda_a * lambda_a * varsigma0_sq;
    Ok(HeterogeneityStats {
        varsigma0_sq,
        zeta0_sq,
        lambda_a,
        bound,
        holds: zeta0_sq <= bound + 1e-10 * bound.max(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::gen_quadratic;
    use crate::spectral::{factorize_g, g_blocks, method_matrices, Method};
    use crate::topology::{build_complete, build_ring, lazy_shift, metropolis_weights};
    use nalgebra::DVector;

    fn setup(method: Method) -> (CombinationMatrix, MethodMatrices, SpectralConstants) {
        let w = lazy_shift(&metropolis_weights(&build_ring(6).unwrap()).unwrap(), 0.5).unwrap();
        let mm = method_matrices(method, &w).unwrap();
        let sc = factorize_g(&g_blocks(&mm, &w)).unwrap();
        (w, mm, sc)
    }

    #[test]
    fn decomposition_identity_on_random_state() {
        let p = gen_quadratic(6, 3, 1.0, 0.3, 2).unwrap();
        for m in [Method::ExactDiffusion, Method::AtcGt, Method::SemiAtcGtG] {
            let (w, mm, sc) = setup(m);
            let mut s = NetworkState::new(DMatrix::from_fn(3, 6, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0));
            s.y = DMatrix::from_fn(3, 6, |r, c| 0.3 * r as f64 - 0.1 * c as f64);
            let e = transformed_error(&s, &mm, &sc, &w, &p, 0.05).unwrap();
            let lhs = e.reconstructed_sq(&sc);
            let rhs = e.ux_sq + e.us_sq;
            assert!((lhs - rhs).abs() <= 1e-8 * rhs, "{m}: {lhs} vs {rhs}");
            assert!((e.ux_sq - s.consensus_error_sq()).abs() < 1e-10);
        }
    }

    #[test]
    fn consensual_state_has_no_primal_component() {
        let p = gen_quadratic(6, 2, 0.0, 0.0, 2).unwrap();
        let (w, mm, sc) = setup(Method::AtcGt);
        let s = NetworkState::consensual(6, &DVector::from_vec(vec![0.4, -1.0]));
        let e = transformed_error(&s, &mm, &sc, &w, &p, 0.1).unwrap();
        assert!(e.ux_sq < 1e-28);
        // Homogeneous data: s vanishes too.
        assert!(e.norm_sq() < 1e-26);
    }

    #[test]
    fn mismatched_artifacts_rejected() {
        let p = gen_quadratic(6, 2, 1.0, 0.0, 2).unwrap();
        let (w, mm, _) = setup(Method::AtcGt);
        let (_, _, sc_ed) = setup(Method::ExactDiffusion);
        let s = NetworkState::consensual(6, &DVector::zeros(2));
        assert!(matches!(transformed_error(&s, &mm, &sc_ed, &w, &p, 0.1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn complete_graph_has_zero_zeta() {
        let p = gen_quadratic(5, 2, 3.0, 0.5, 9).unwrap();
        let w = metropolis_weights(&build_complete(5).unwrap()).unwrap();
        let mm = method_matrices(Method::ExactDiffusion, &w).unwrap();
        let h = heterogeneity_stats(&p, &DMatrix::zeros(2, 5), &mm).unwrap();
        assert!(h.varsigma0_sq > 0.0);
        assert!(h.zeta0_sq < 1e-28);
        assert!(h.holds);
        let bad = DMatrix::from_fn(2, 5, |_, c| c as f64);
        assert!(heterogeneity_stats(&p, &bad, &mm).is_err());
    }
}
