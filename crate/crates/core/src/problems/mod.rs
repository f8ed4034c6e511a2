//! Objective families, heterogeneous data generation and the noisy gradient
//! oracle.

mod cache;
mod oracle;
mod reference;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{load_dataset, save_dataset, DatasetHeader, DATASET_MAGIC};
pub use oracle::{stream_key, GradOracle, GradientBlock};
pub use reference::{reference_optimum, reference_optimum_cached, Provenance, ReferenceOptimum};

/// Half-width of the interval on which curvature-based constants of the PL
/// toy are estimated.
pub const PL_REGION: f64 = 5.0;
const PL_GRID_POINTS: usize = 10_001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    #[serde(rename = "logistic")]
    LogisticNonconvex,
    PlToy,
    Quadratic,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::LogisticNonconvex => "logistic",
            ProblemKind::PlToy => "pl-toy",
            ProblemKind::Quadratic => "quadratic",
        }
    }
}

/// Per-agent data.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemData {
    /// Row-major `samples × d` feature block and ±1 labels per agent.
    Logistic { samples: usize, features: Vec<Vec<f64>>, labels: Vec<Vec<f64>> },
    /// `f_i(x) = x² + 3 sin²x + a_i x cos x`.
    PlToy { a: Vec<f64> },
    /// `f_i(x) = ½ Σ_j h_ij (x_j − b_ij)²`.
    Quadratic { curvature: Vec<Vec<f64>>, centers: Vec<Vec<f64>> },
}

/// A finite-sum objective `f = (1/n) Σ f_i` split across `n` agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    n: usize,
    d: usize,
    kind: ProblemKind,
    data: ProblemData,
    rho: f64,
    sigma_h2: f64,
    seed: u64,
    l_smooth: f64,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + e^m)` without overflow.
fn logistic_weight(m: f64) -> f64 {
    if m > 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Problem {
    fn assemble(n: usize, d: usize, kind: ProblemKind, data: ProblemData, rho: f64, sigma_h2: f64, seed: u64) -> Result<Self> {
        let mut p = Self { n, d, kind, data, rho, sigma_h2, seed, l_smooth: 0.0 };
        p.l_smooth = p.estimate_smoothness();
        if !(p.l_smooth > 0.0 && p.l_smooth.is_finite()) {
            return Err(Error::Numeric(format!("smoothness estimate {} is not positive", p.l_smooth)));
        }
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn data(&self) -> &ProblemData {
        &self.data
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma_h2(&self) -> f64 {
        self.sigma_h2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Smoothness constant used by the step-size rules and monitors.
    pub fn l_smooth(&self) -> f64 {
        self.l_smooth
    }

    /// `f_i(x)` without input validation.
    pub fn value_unchecked(&self, i: usize, x: &[f64]) -> f64 {
        match &self.data {
            ProblemData::Logistic { samples, features, labels } => {
                let h = &features[i];
                let y = &labels[i];
                let d = self.d;
                let loss: f64 = (0..*samples)
                    .map(|l| softplus(-y[l] * dot(&h[l * d..(l + 1) * d], x)))
                    .sum::<f64>()
                    / *samples as f64;
                loss + self.rho * x.iter().map(|v| v * v / (1.0 + v * v)).sum::<f64>()
            }
            ProblemData::PlToy { a } => {
                let v = x[0];
                let s = v.sin();
                v * v + 3.0 * s * s + a[i] * v * v.cos()
            }
            ProblemData::Quadratic { curvature, centers } => {
                let (h, b) = (&curvature[i], &centers[i]);
                0.5 * (0..self.d).map(|j| h[j] * (x[j] - b[j]).powi(2)).sum::<f64>()
            }
        }
    }

    /// Writes `∇f_i(x)` into `out` without input validation.
    pub fn grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        match &self.data {
            ProblemData::Logistic { samples, features, labels } => {
                let h = &features[i];
                let y = &labels[i];
                let d = self.d;
                out.iter_mut().for_each(|o| *o = 0.0);
                for l in 0..*samples {
                    let row = &h[l * d..(l + 1) * d];
                    let c = -y[l] * logistic_weight(y[l] * dot(row, x));
                    for (o, hv) in out.iter_mut().zip(row) {
                        *o += c * hv;
                    }
                }
                let inv = 1.0 / *samples as f64;
                for (o, &v) in out.iter_mut().zip(x) {
                    let q = 1.0 + v * v;
                    *o = *o * inv + self.rho * 2.0 * v / (q * q);
                }
            }
            ProblemData::PlToy { a } => {
                let v = x[0];
                out[0] = 2.0 * v + 3.0 * (2.0 * v).sin() + a[i] * (v.cos() - v * v.sin());
            }
            ProblemData::Quadratic { curvature, centers } => {
                let (h, b) = (&curvature[i], &centers[i]);
                for j in 0..self.d {
                    out[j] = h[j] * (x[j] - b[j]);
                }
            }
        }
    }

    fn check_point(&self, i: usize, x: &DVector<f64>) -> Result<()> {
        if i >= self.n {
            return Err(Error::InvalidInput(format!("agent {i} out of range for n = {}", self.n)));
        }
        if x.len() != self.d {
            return Err(Error::InvalidInput(format!("point has dimension {}, expected {}", x.len(), self.d)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite point".into()));
        }
        Ok(())
    }

    /// `f_i(x)`.
    pub fn value(&self, i: usize, x: &DVector<f64>) -> Result<f64> {
        self.check_point(i, x)?;
        Ok(self.value_unchecked(i, x.as_slice()))
    }

    /// `∇f_i(x)`.
    pub fn grad(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(i, x)?;
        let mut out = DVector::zeros(self.d);
        self.grad_into(i, x.as_slice(), out.as_mut_slice());
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for agent {i}")));
        }
        Ok(out)
    }

    /// `f(x) = (1/n) Σ f_i(x)`.
    pub fn global_value(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|i| self.value_unchecked(i, x)).sum::<f64>() / self.n as f64
    }

    /// `∇f(x)`, using the aggregated closed form where one exists.
    pub fn global_grad(&self, x: &[f64]) -> DVector<f64> {
        match &self.data {
            ProblemData::PlToy { a } => {
                let v = x[0];
                let abar = a.iter().sum::<f64>() / self.n as f64;
                DVector::from_element(1, 2.0 * v + 3.0 * (2.0 * v).sin() + abar * (v.cos() - v * v.sin()))
            }
            ProblemData::Quadratic { curvature, centers } => DVector::from_fn(self.d, |j, _| {
                (0..self.n).map(|i| curvature[i][j] * (x[j] - centers[i][j])).sum::<f64>() / self.n as f64
            }),
            ProblemData::Logistic { .. } => self.mean_agent_grad(x),
        }
    }

    /// `(1/n) Σ ∇f_i(x)`, assembled agent by agent.
    pub fn mean_agent_grad(&self, x: &[f64]) -> DVector<f64> {
        let mut acc = DVector::zeros(self.d);
        let mut g = vec![0.0; self.d];
        for i in 0..self.n {
            self.grad_into(i, x, &mut g);
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        acc / self.n as f64
    }

    /// Per-agent gradients at the columns of `x` (`d × n`, column `i` is agent `i`).
    pub fn stacked_grads(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.d, self.n);
        for i in 0..self.n {
            let col: Vec<f64> = x.column(i).iter().copied().collect();
            let mut g = vec![0.0; self.d];
            self.grad_into(i, &col, &mut g);
            out.column_mut(i).copy_from_slice(&g);
        }
        out
    }

    /// Second derivative of `f_i` for the scalar PL toy.
    fn pl_second_derivative(a: f64, x: f64) -> f64 {
        2.0 + 6.0 * (2.0 * x).cos() + a * (-2.0 * x.sin() - x * x.cos())
    }

    fn estimate_smoothness(&self) -> f64 {
        match &self.data {
            ProblemData::Logistic { samples, features, .. } => {
                let d = self.d;
                let mut worst = 0.0_f64;
                for h in features {
                    let hm = DMatrix::from_row_slice(*samples, d, h);
                    let gram = hm.transpose() * &hm;
                    let top = SymmetricEigen::new(gram).eigenvalues.max();
                    worst = worst.max(top / (4.0 * *samples as f64));
                }
                worst + 2.0 * self.rho
            }
            ProblemData::PlToy { a } => {
                let mut worst = 0.0_f64;
                for &ai in a {
                    for k in 0..PL_GRID_POINTS {
                        let x = -PL_REGION + 2.0 * PL_REGION * k as f64 / (PL_GRID_POINTS - 1) as f64;
                        worst = worst.max(Self::pl_second_derivative(ai, x).abs());
                    }
                }
                worst
            }
            ProblemData::Quadratic { curvature, .. } => {
                curvature.iter().flatten().fold(0.0_f64, |m, &h| m.max(h))
            }
        }
    }

    /// PL constant `μ` with `‖∇f(x)‖² ≥ 2μ(f(x) − f*)`.
    ///
    /// For the PL toy this is the minimum of `f'(x)²/(2f(x))` over a grid on
    /// `[−5, 5]`; for quadratics it is the smallest averaged curvature.
    pub fn pl_constant(&self) -> Result<f64> {
        match &self.data {
            ProblemData::PlToy { .. } => {
                let mut mu = f64::INFINITY;
                for k in 0..PL_GRID_POINTS {
                    let x = -PL_REGION + 2.0 * PL_REGION * k as f64 / (PL_GRID_POINTS - 1) as f64;
                    let f = self.global_value(&[x]);
                    if f > 1e-12 {
                        let g = self.global_grad(&[x])[0];
                        mu = mu.min(g * g / (2.0 * f));
                    }
                }
                Ok(mu)
            }
            ProblemData::Quadratic { curvature, .. } => Ok((0..self.d)
                .map(|j| curvature.iter().map(|h| h[j]).sum::<f64>() / self.n as f64)
                .fold(f64::INFINITY, f64::min)),
            ProblemData::Logistic { .. } => Err(Error::NotApplicable(
                "the logistic objective has no known PL constant".into(),
            )),
        }
    }
}

/// Logistic regression with a non-convex regularizer.
///
/// Draws `x* ~ N(0, I)`, local solutions `x*_i = x* + v_i` with
/// `v_i ~ N(0, σ_h² I)`, features `h ~ N(0, I)` and labels `+1` with
/// probability `1/(1 + exp(−hᵀx*_i))`.
pub fn gen_logistic(n: usize, d: usize, samples: usize, rho: f64, sigma_h2: f64, seed: u64) -> Result<Problem> {
    if n < 1 || d < 1 || samples < 1 {
        return Err(Error::InvalidParameter(format!("need n, d, samples >= 1, got {n}, {d}, {samples}")));
    }
    if !(sigma_h2 >= 0.0 && sigma_h2.is_finite()) || !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("need finite σ_h² >= 0 and ρ >= 0, got {sigma_h2}, {rho}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_star: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let sigma_h = sigma_h2.sqrt();
    let local: Vec<Vec<f64>> = (0..n)
        .map(|_| x_star.iter().map(|&c| c + sigma_h * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..samples * d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut labels = Vec::with_capacity(n);
    for (xi, h) in local.iter().zip(&features) {
        let y: Vec<f64> = (0..samples)
            .map(|l| {
                let p = 1.0 / (1.0 + (-dot(&h[l * d..(l + 1) * d], xi)).exp());
                if rng.random::<f64>() < p { 1.0 } else { -1.0 }
            })
            .collect();
        labels.push(y);
    }
    Problem::assemble(
        n,
        d,
        ProblemKind::LogisticNonconvex,
        ProblemData::Logistic { samples, features, labels },
        rho,
        sigma_h2,
        seed,
    )
}

/// Scalar toy objective satisfying the PL condition.
///
/// Agents are indexed `0..n`. For `1 ≤ i < n/2`, `a_i = σ_h² i` and
/// `a_{n−i} = −a_i`; the self-paired agents `0` and `n/2` get `a = 0`, so
/// `Σ a_i = 0` and `f(x) = x² + 3 sin²x`.
pub fn gen_pl_toy(n: usize, sigma_h2: f64) -> Result<Problem> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidParameter(format!("the PL toy needs an even n >= 2, got {n}")));
    }
    if !(sigma_h2 >= 0.0 && sigma_h2.is_finite()) {
        return Err(Error::InvalidParameter(format!("σ_h² must be finite and >= 0, got {sigma_h2}")));
    }
    let mut a = vec![0.0; n];
    for i in 1..n / 2 {
        a[i] = sigma_h2 * i as f64;
        a[n - i] = -a[i];
    }
    Problem::assemble(n, 1, ProblemKind::PlToy, ProblemData::PlToy { a }, 0.0, sigma_h2, 0)
}

/// Separable quadratic with heterogeneous curvature and centres.
///
/// `h_ij ~ U[1 − s, 1 + s]` for `spread = s ∈ [0, 1)`, and
/// `b_ij = b*_j + σ_h ξ_ij` with `b* ~ N(0, I)`.
pub fn gen_quadratic(n: usize, d: usize, sigma_h2: f64, spread: f64, seed: u64) -> Result<Problem> {
    if n < 1 || d < 1 {
        return Err(Error::InvalidParameter(format!("need n, d >= 1, got {n}, {d}")));
    }
    if !(0.0..1.0).contains(&spread) || !(sigma_h2 >= 0.0 && sigma_h2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need curvature spread in [0, 1) and finite σ_h² >= 0, got {spread}, {sigma_h2}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let sigma_h = sigma_h2.sqrt();
    let mut curvature = Vec::with_capacity(n);
    let mut centers = Vec::with_capacity(n);
    for _ in 0..n {
        curvature.push((0..d).map(|_| 1.0 - spread + 2.0 * spread * rng.random::<f64>()).collect());
        centers.push(
            base.iter()
                .map(|&c| c + sigma_h * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
    }
    Problem::assemble(n, d, ProblemKind::Quadratic, ProblemData::Quadratic { curvature, centers }, 0.0, sigma_h2, seed)
}

/// Problem description as written in configuration files; `n` comes from
/// the topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    #[serde(default = "defaults::dimension")]
    pub d: usize,
    #[serde(default = "defaults::samples")]
    pub samples: usize,
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    #[serde(default)]
    pub sigma_h2: f64,
    #[serde(default)]
    pub curvature_spread: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn dimension() -> usize {
        20
    }
    pub fn samples() -> usize {
        2000
    }
    pub fn rho() -> f64 {
        0.001
    }
}

impl ProblemSpec {
    pub fn generate(&self, n: usize) -> Result<Problem> {
        match self.kind {
            ProblemKind::LogisticNonconvex => gen_logistic(n, self.d, self.samples, self.rho, self.sigma_h2, self.seed),
            ProblemKind::PlToy => gen_pl_toy(n, self.sigma_h2),
            ProblemKind::Quadratic => gen_quadratic(n, self.d, self.sigma_h2, self.curvature_spread, self.seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pl_toy_coefficients() {
        let p = gen_pl_toy(32, 2.0).unwrap();
        let ProblemData::PlToy { a } = p.data() else { unreachable!() };
        assert_eq!(a[1], 2.0);
        assert_eq!(a[31], -2.0);
        assert_eq!(a[15], 30.0);
        assert_eq!(a[17], -30.0);
        assert_eq!(a[0], 0.0);
        assert_eq!(a[16], 0.0);
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
        for (i, &ai) in a.iter().enumerate() {
            assert_eq!(p.grad(i, &DVector::zeros(1)).unwrap()[0], ai);
        }
        assert!(matches!(gen_pl_toy(7, 1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn pl_toy_global_function_and_constants() {
        let p = gen_pl_toy(32, 2.0).unwrap();
        for x in [-2.0, -0.3, 0.0, 1.7] {
            let s: f64 = f64::sin(x);
            assert_abs_diff_eq!(p.global_value(&[x]), x * x + 3.0 * s * s, epsilon = 1e-12);
        }
        let mu = p.pl_constant().unwrap();
        assert!(mu > 0.0 && mu < 1.0, "μ = {mu}");
        assert!(p.l_smooth() > 50.0, "L = {}", p.l_smooth());
        let homogeneous = gen_pl_toy(4, 0.0).unwrap();
        for i in 0..4 {
            assert_eq!(homogeneous.value_unchecked(i, &[0.7]), homogeneous.global_value(&[0.7]));
        }
    }

    #[test]
    fn logistic_defaults_and_labels() {
        let p = gen_logistic(4, 20, 200, 0.001, 0.5, 11).unwrap();
        let ProblemData::Logistic { labels, features, .. } = p.data() else { unreachable!() };
        assert!(labels.iter().flatten().all(|&y| y == 1.0 || y == -1.0));
        assert_eq!(features[0].len(), 200 * 20);
        assert_eq!(p, gen_logistic(4, 20, 200, 0.001, 0.5, 11).unwrap());
        assert_ne!(p, gen_logistic(4, 20, 200, 0.001, 0.5, 12).unwrap());
        assert!(p.l_smooth() > 0.0);
    }

    #[test]
    fn logistic_label_flip_negates_data_gradient() {
        let p = gen_logistic(2, 5, 50, 0.0, 0.1, 3).unwrap();
        let mut flipped = p.clone();
        if let ProblemData::Logistic { labels, .. } = &mut flipped.data {
            labels.iter_mut().flatten().for_each(|y| *y = -*y);
        }
        let zero = DVector::zeros(5);
        let g = p.grad(0, &zero).unwrap();
        let gf = flipped.grad(0, &zero).unwrap();
        assert!((g + gf).norm() < 1e-14);
    }

    #[test]
    fn global_gradient_two_ways() {
        let p = gen_quadratic(6, 3, 1.0, 0.5, 2).unwrap();
        let x = [0.3, -1.0, 2.0];
        assert!((p.global_grad(&x) - p.mean_agent_grad(&x)).norm() < 1e-12);
        let p = gen_pl_toy(8, 1.5).unwrap();
        assert!((p.global_grad(&[0.9]) - p.mean_agent_grad(&[0.9])).norm() < 1e-12);
    }

    #[test]
    fn non_finite_input_rejected() {
        let p = gen_pl_toy(4, 1.0).unwrap();
        let x = DVector::from_element(1, f64::NAN);
        assert!(matches!(p.grad(0, &x), Err(Error::Numeric(_))));
        assert!(matches!(p.grad(9, &DVector::zeros(1)), Err(Error::InvalidInput(_))));
    }
}
