use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Problem;
use crate::error::{Error, Result};
use crate::exec::Execution;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the noise stream for one `(seed, agent, iteration)` triple.
pub fn stream_key(seed: u64, agent: usize, iteration: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ agent as u64) ^ iteration as u64)
}

/// Exact gradients plus the additive noise realized at one iteration.
///
/// Columns are agents.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBlock {
    pub exact: DMatrix<f64>,
    pub noise: Option<DMatrix<f64>>,
}

impl GradientBlock {
    pub fn stochastic(&self) -> DMatrix<f64> {
        match &self.noise {
            Some(w) => &self.exact + w,
            None => self.exact.clone(),
        }
    }
}

/// Gradient oracle `∇f_i(x) + s_i` with `s_i ~ N(0, σ_n² I)`.
///
/// The noise for agent `i` at iteration `k` depends only on
/// `(seed, i, k)`, so trajectories do not depend on evaluation order.
#[derive(Debug, Clone, Copy)]
pub struct GradOracle<'a> {
    problem: &'a Problem,
    sigma_n2: f64,
    seed: u64,
    exec: Execution,
}

impl<'a> GradOracle<'a> {
    pub fn new(problem: &'a Problem, sigma_n2: f64, seed: u64) -> Result<Self> {
        if !(sigma_n2 >= 0.0 && sigma_n2.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise variance {sigma_n2} must be finite and >= 0")));
        }
        Ok(Self { problem, sigma_n2, seed, exec: Execution::Sequential })
    }

    /// Evaluates agents according to `exec` in [`GradOracle::evaluate`].
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn problem(&self) -> &'a Problem {
        self.problem
    }

    pub fn sigma_n2(&self) -> f64 {
        self.sigma_n2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_exact(&self) -> bool {
        self.sigma_n2 == 0.0
    }

    /// Noise drawn for `agent` at `iteration`; `None` when `σ_n² = 0`.
    pub fn noise(&self, agent: usize, iteration: usize) -> Option<DVector<f64>> {
        if self.is_exact() {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(self.seed, agent, iteration));
        let s = self.sigma_n2.sqrt();
        Some(DVector::from_fn(self.problem.d(), |_, _| s * rng.sample::<f64, _>(StandardNormal)))
    }

    /// `∇f_i(x) + s_i^k`.
    pub fn stochastic_grad(&self, agent: usize, iteration: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.problem.grad(agent, x)?;
        Ok(match self.noise(agent, iteration) {
            Some(w) => g + w,
            None => g,
        })
    }

    /// Gradients of every agent at the columns of `x` (`d × n`).
    pub fn evaluate(&self, x: &DMatrix<f64>, iteration: usize) -> GradientBlock {
        let d = self.problem.d();
        let n = self.problem.n();
        let cols = self.exec.map(n, |i| {
            let xi: Vec<f64> = x.column(i).iter().copied().collect();
            let mut g = vec![0.0; d];
            self.problem.grad_into(i, &xi, &mut g);
            (g, self.noise(i, iteration))
        });
        self.assemble(cols)
    }

    /// Gradients of every agent at the common point `x`.
    pub fn evaluate_at(&self, x: &DVector<f64>, iteration: usize) -> GradientBlock {
        let d = self.problem.d();
        let cols = self.exec.map(self.problem.n(), |i| {
            let mut g = vec![0.0; d];
            self.problem.grad_into(i, x.as_slice(), &mut g);
            (g, self.noise(i, iteration))
        });
        self.assemble(cols)
    }

    fn assemble(&self, cols: Vec<(Vec<f64>, Option<DVector<f64>>)>) -> GradientBlock {
        let d = self.problem.d();
        let n = cols.len();
        let mut exact = DMatrix::zeros(d, n);
        let mut noise = (!self.is_exact()).then(|| DMatrix::zeros(d, n));
        for (i, (g, w)) in cols.into_iter().enumerate() {
            exact.column_mut(i).copy_from_slice(&g);
            if let (Some(block), Some(w)) = (noise.as_mut(), w) {
                block.set_column(i, &w);
            }
        }
        GradientBlock { exact, noise }
    }
}
