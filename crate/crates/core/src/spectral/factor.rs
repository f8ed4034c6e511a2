use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;

use super::{Family, Method, MethodMatrices};
use crate::error::{Error, Result};
use crate::topology::{CombinationMatrix, EIG_TOL};

type C = Complex64;
pub type CMatrix2 = Matrix2<C>;

/// One 2×2 block of the transformed recursion, for one non-principal
/// eigenvalue of `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GBlock {
    pub lambda: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub lambda_c: f64,
    pub g: Matrix2<f64>,
}

impl GBlock {
    /// Block for eigenvalue `lambda` of `W`; eigenvalues within `1e-10` of
    /// zero are treated as zero.
    pub fn new(method: Method, lambda: f64) -> Self {
        let lambda = if lambda.abs() < EIG_TOL { 0.0 } else { lambda };
        let coeffs = method.coefficients();
        let la = coeffs.a.eval(lambda);
        let lc = coeffs.c.eval(lambda);
        let lb = method.b_eigenvalue(lambda);
        let g = Matrix2::new(la * lc - lb * lb, -lb, lb, 1.0);
        Self { lambda, lambda_a: la, lambda_b: lb, lambda_c: lc, g }
    }
}

/// Blocks for every non-principal eigenvalue, in the order of the
/// eigenvectors of `W`.
#[derive(Debug, Clone)]
pub struct GBlocks {
    pub method: Method,
    pub n: usize,
    pub mixing_rate: f64,
    pub lambda_under: Option<f64>,
    pub blocks: Vec<GBlock>,
}

impl GBlocks {
    /// Blocks from an explicit list of non-principal eigenvalues.
    pub fn from_eigenvalues(method: Method, eigenvalues: &[f64]) -> Self {
        let blocks: Vec<_> = eigenvalues.iter().map(|&l| GBlock::new(method, l)).collect();
        let mixing_rate = eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        let psd = eigenvalues.iter().all(|&l| l >= -EIG_TOL);
        let lambda_under = psd
            .then(|| eigenvalues.iter().copied().filter(|&l| l > EIG_TOL).fold(1.0_f64, f64::min));
        Self { method, n: eigenvalues.len() + 1, mixing_rate, lambda_under, blocks }
    }
}

/// Builds `G_i` for `i = 2..n`.
pub fn g_blocks(mm: &MethodMatrices, w: &CombinationMatrix) -> GBlocks {
    let mut gb = GBlocks::from_eigenvalues(mm.method, &w.eigenvalues()[1..]);
    gb.lambda_under = w.min_nonzero_eig();
    gb
}

/// `G_i = V_i Γ_i V_i⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockFactorization {
    pub block: GBlock,
    pub eigenvalues: [C; 2],
    pub v: CMatrix2,
    pub v_inv: CMatrix2,
    pub gamma: CMatrix2,
    pub jordan: bool,
    pub epsilon: Option<f64>,
}

impl BlockFactorization {
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues[0].norm().max(self.eigenvalues[1].norm())
    }

    pub fn reconstruction_error(&self) -> f64 {
        let g = self.block.g.map(|v| C::new(v, 0.0));
        frobenius(&(g - self.v * self.gamma * self.v_inv))
    }
}

/// Constants of the similarity transformation, one [`BlockFactorization`]
/// per non-principal eigenvalue.
#[derive(Debug, Clone)]
pub struct SpectralConstants {
    pub method: Method,
    pub n: usize,
    pub gamma: f64,
    pub lambda_a: f64,
    pub lambda_b_under: f64,
    pub v1: f64,
    pub v2: f64,
    pub lambda_under: Option<f64>,
    pub mixing_rate: f64,
    pub blocks: Vec<BlockFactorization>,
}

impl SpectralConstants {
    /// `υ = √n · v₂`.
    pub fn upsilon(&self) -> f64 {
        (self.n as f64).sqrt() * self.v2
    }

    pub fn max_reconstruction_error(&self) -> f64 {
        self.blocks.iter().map(BlockFactorization::reconstruction_error).fold(0.0, f64::max)
    }

    /// Dense `G`, `V̂`, `Γ`, `V̂⁻¹` with block `i` occupying rows and columns
    /// `2i, 2i+1`. Intended for small verification problems.
    pub fn dense(&self) -> DenseFactorization {
        let m = 2 * self.blocks.len();
        let mut out = DenseFactorization {
            g: DMatrix::zeros(m, m),
            v: DMatrix::zeros(m, m),
            gamma: DMatrix::zeros(m, m),
            v_inv: DMatrix::zeros(m, m),
        };
        for (i, b) in self.blocks.iter().enumerate() {
            for r in 0..2 {
                for c in 0..2 {
                    out.g[(2 * i + r, 2 * i + c)] = C::new(b.block.g[(r, c)], 0.0);
                    out.v[(2 * i + r, 2 * i + c)] = b.v[(r, c)];
                    out.gamma[(2 * i + r, 2 * i + c)] = b.gamma[(r, c)];
                    out.v_inv[(2 * i + r, 2 * i + c)] = b.v_inv[(r, c)];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct DenseFactorization {
    pub g: DMatrix<C>,
    pub v: DMatrix<C>,
    pub gamma: DMatrix<C>,
    pub v_inv: DMatrix<C>,
}

/// Factorizes every block and collects the norms.
pub fn factorize_g(gb: &GBlocks) -> Result<SpectralConstants> {
    if gb.blocks.is_empty() {
        return Err(Error::InvalidInput("no non-principal eigenvalues to factorize".into()));
    }
    let ed_epsilon = if gb.mixing_rate > EIG_TOL { gb.mixing_rate.sqrt() } else { 0.5 };
    let mut blocks = Vec::with_capacity(gb.blocks.len());
    for blk in &gb.blocks {
        let f = factorize_block(gb.method, blk, ed_epsilon);
        if f.spectral_radius() >= 1.0 {
            return Err(Error::UnstableMethod {
                method: gb.method.to_string(),
                lambda: blk.lambda,
                radius: f.spectral_radius(),
            });
        }
        blocks.push(f);
    }
    let max_by = |f: &dyn Fn(&BlockFactorization) -> f64| blocks.iter().map(f).fold(0.0, f64::max);
    let gamma = max_by(&|b| spectral_norm(&b.gamma));
    let v1 = max_by(&|b| spectral_norm(&b.v));
    let v2 = max_by(&|b| spectral_norm(&b.v_inv));
    let lambda_a = max_by(&|b| b.block.lambda_a.abs());
    let lambda_b_under = blocks.iter().map(|b| b.block.lambda_b).fold(f64::INFINITY, f64::min);
    if lambda_b_under <= EIG_TOL {
        return Err(Error::InvalidInput(format!(
            "{}: B vanishes on a non-consensual direction",
            gb.method
        )));
    }
    if gamma >= 1.0 {
        return Err(Error::UnstableMethod {
            method: gb.method.to_string(),
            lambda: gb.mixing_rate,
            radius: gamma,
        });
    }
    Ok(SpectralConstants {
        method: gb.method,
        n: gb.n,
        gamma,
        lambda_a,
        lambda_b_under,
        v1,
        v2,
        lambda_under: gb.lambda_under,
        mixing_rate: gb.mixing_rate,
        blocks,
    })
}

fn factorize_block(method: Method, blk: &GBlock, ed_epsilon: f64) -> BlockFactorization {
    let g = &blk.g;
    let (a, b, c, d) = (g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]);
    let disc = (a - d) * (a - d) + 4.0 * b * c;
    let scale = (a - d) * (a - d) + 4.0 * (b * c).abs();
    let root = C::new(disc, 0.0).sqrt();
    let g1 = (C::new(a + d, 0.0) + root) / 2.0;
    let g2 = (C::new(a + d, 0.0) - root) / 2.0;
    let repeated = (g1 - g2).norm() < 1e-9 || disc.abs() <= 64.0 * f64::EPSILON * scale;
    if repeated {
        jordan(method, blk, ed_epsilon)
    } else {
        distinct(blk, g1, g2)
    }
}

fn distinct(blk: &GBlock, g1: C, g2: C) -> BlockFactorization {
    let g = &blk.g;
    let (a, b, c, d) = (g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]);
    let vec_for = |l: C| -> [C; 2] {
        if b.abs() > EIG_TOL {
            [C::new(b, 0.0) / b.abs(), (l - a) / b.abs()]
        } else {
            [(l - d) / c.abs(), C::new(c, 0.0) / c.abs()]
        }
    };
    let zero = C::new(0.0, 0.0);
    if b.abs() <= EIG_TOL && c.abs() <= EIG_TOL {
        // Already diagonal; keep the eigenvalues in diagonal order.
        let (g1, g2) = (C::new(a, 0.0), C::new(d, 0.0));
        let one = C::new(1.0, 0.0);
        return finish(blk, [g1, g2], CMatrix2::new(one, zero, zero, one), CMatrix2::new(g1, zero, zero, g2), false, None);
    }
    let (p, q) = (vec_for(g1), vec_for(g2));
    let v = CMatrix2::new(p[0], q[0], p[1], q[1]);
    finish(blk, [g1, g2], v, CMatrix2::new(g1, zero, zero, g2), false, None)
}

fn jordan(method: Method, blk: &GBlock, ed_epsilon: f64) -> BlockFactorization {
    let g = blk.g;
    let lam = (g[(0, 0)] + g[(1, 1)]) / 2.0;
    let (t, eps) = match method.family() {
        Family::Diffusion => (Matrix2::new(1.0, -0.5, -1.0, -0.5), ed_epsilon),
        Family::Tracking => {
            let l = blk.lambda;
            (Matrix2::new(-1.0, 0.0, 1.0, 1.0 / (1.0 - l)), (1.0 - l.abs()) / 2.0)
        }
    };
    let chain_ok = |t: &Matrix2<f64>| {
        let j = Matrix2::new(lam, 1.0, 0.0, lam);
        (g * t - t * j).norm() <= 1e-9 * (1.0 + g.norm()) && t.determinant().abs() > 1e-12
    };
    let (t, eps) = if chain_ok(&t) {
        (t, eps)
    } else {
        let n = g - Matrix2::identity() * lam;
        if n.norm() <= 1e-12 * (1.0 + g.norm()) {
            // Scalar block: already diagonal.
            let l = C::new(lam, 0.0);
            let one = C::new(1.0, 0.0);
            let zero = C::new(0.0, 0.0);
            return finish(blk, [l, l], CMatrix2::new(one, zero, zero, one), CMatrix2::new(l, zero, zero, l), false, None);
        }
        let k = if n.column(1).norm() >= n.column(0).norm() { 1 } else { 0 };
        let t2 = Matrix2::identity().column(k).into_owned();
        let t1 = n * t2;
        (Matrix2::from_columns(&[t1, t2]), (1.0 - lam.abs()) / 2.0)
    };
    let v = (t * Matrix2::new(1.0, 0.0, 0.0, eps)).map(|x| C::new(x, 0.0));
    let l = C::new(lam, 0.0);
    let gamma = CMatrix2::new(l, C::new(eps, 0.0), C::new(0.0, 0.0), l);
    finish(blk, [l, l], v, gamma, true, Some(eps))
}

fn finish(
    blk: &GBlock,
    eigenvalues: [C; 2],
    v: CMatrix2,
    gamma: CMatrix2,
    jordan: bool,
    epsilon: Option<f64>,
) -> BlockFactorization {
    BlockFactorization { block: *blk, eigenvalues, v, v_inv: inverse(&v), gamma, jordan, epsilon }
}

fn inverse(m: &CMatrix2) -> CMatrix2 {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    CMatrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det
}

fn frobenius(m: &CMatrix2) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value of a complex 2×2 matrix.
pub fn spectral_norm(m: &CMatrix2) -> f64 {
    let h = m * m.adjoint();
    let p = h[(0, 0)].re;
    let r = h[(1, 1)].re;
    let q = h[(0, 1)];
    let top = (p + r) / 2.0 + (((p - r) / 2.0).powi(2) + q.norm_sqr()).sqrt();
    top.max(0.0).sqrt()
}
