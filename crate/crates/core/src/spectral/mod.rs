//! Method matrices as polynomials of `W` and the block factorization of the
//! transformed error recursion.

mod factor;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{lazy_shift, CombinationMatrix, TopologySpec, EIG_TOL};

pub use factor::{factorize_g, g_blocks, BlockFactorization, GBlock, GBlocks, SpectralConstants};

/// Members of the unified primal-dual family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ed")]
    ExactDiffusion,
    #[serde(rename = "extra")]
    Extra,
    #[serde(rename = "atc-gt")]
    AtcGt,
    #[serde(rename = "nonatc-gt")]
    NonAtcGt,
    #[serde(rename = "semi-atc-gt-x")]
    SemiAtcGtX,
    #[serde(rename = "semi-atc-gt-g")]
    SemiAtcGtG,
}

/// Which analytic block structure a method shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `B² = I − W`: Exact Diffusion and EXTRA.
    Diffusion,
    /// `B = I − W`: the gradient-tracking variants.
    Tracking,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ExactDiffusion,
        Method::Extra,
        Method::AtcGt,
        Method::NonAtcGt,
        Method::SemiAtcGtX,
        Method::SemiAtcGtG,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ExactDiffusion => "ed",
            Method::Extra => "extra",
            Method::AtcGt => "atc-gt",
            Method::NonAtcGt => "nonatc-gt",
            Method::SemiAtcGtX => "semi-atc-gt-x",
            Method::SemiAtcGtG => "semi-atc-gt-g",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Method::ExactDiffusion | Method::Extra => Family::Diffusion,
            _ => Family::Tracking,
        }
    }

    /// Diffusion-family methods need `W ⪰ 0` for a real `B = (I − W)^{1/2}`.
    pub fn requires_psd(self) -> bool {
        self.family() == Family::Diffusion
    }

    /// Polynomial coefficients of `(A, B², C)` in powers of `W`.
    pub fn coefficients(self) -> Coefficients {
        let p = |c: &[f64]| Poly(c.to_vec());
        let (a, b_sq, c) = match self {
            Method::ExactDiffusion => (p(&[0.0, 1.0]), p(&[1.0, -1.0]), p(&[1.0])),
            Method::Extra => (p(&[1.0]), p(&[1.0, -1.0]), p(&[0.0, 1.0])),
            Method::AtcGt => (p(&[0.0, 0.0, 1.0]), p(&[1.0, -2.0, 1.0]), p(&[1.0])),
            Method::NonAtcGt => (p(&[1.0]), p(&[1.0, -2.0, 1.0]), p(&[0.0, 0.0, 1.0])),
            Method::SemiAtcGtX | Method::SemiAtcGtG => {
                (p(&[0.0, 1.0]), p(&[1.0, -2.0, 1.0]), p(&[0.0, 1.0]))
            }
        };
        Coefficients { a, b_sq, c }
    }

    /// Eigenvalue of `B` paired with eigenvalue `lambda` of `W`.
    pub fn b_eigenvalue(self, lambda: f64) -> f64 {
        match self.family() {
            Family::Diffusion => (1.0 - lambda).max(0.0).sqrt(),
            Family::Tracking => 1.0 - lambda,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// Real polynomial `Σ c_l W^l`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_matrix(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = w.nrows();
        let mut acc = DMatrix::zeros(n, n);
        for &c in self.0.iter().rev() {
            acc = &acc * w;
            for i in 0..n {
                acc[(i, i)] += c;
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficients {
    pub a: Poly,
    pub b_sq: Poly,
    pub c: Poly,
}

/// `(A, B², B, C)` for one method on one combination matrix.
#[derive(Debug, Clone)]
pub struct MethodMatrices {
    pub method: Method,
    pub a: DMatrix<f64>,
    pub b_sq: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub coeffs: Coefficients,
}

/// Symmetric square root of a symmetric PSD matrix.
///
/// Eigenvalues within `1e-10` of zero are treated as zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::InvalidInput("psd_sqrt needs a square matrix".into()));
    }
    if (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
        return Err(Error::InvalidInput("psd_sqrt needs a symmetric matrix".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -EIG_TOL {
        return Err(Error::NotPsd(min));
    }
    let roots = eig.eigenvalues.map(|l| if l <= EIG_TOL { 0.0 } else { l.sqrt() });
    let u = &eig.eigenvectors;
    Ok(u * DMatrix::from_diagonal(&roots) * u.transpose())
}

/// Builds the method triple on `w`.
///
/// `B` is assembled from the cached eigendecomposition of `W` so that
/// `B𝟙 = 0` holds to machine precision.
pub fn method_matrices(method: Method, w: &CombinationMatrix) -> Result<MethodMatrices> {
    if method.requires_psd() && !w.is_psd() {
        return Err(Error::RequiresPsd { method: method.to_string(), min_eig: w.min_eigenvalue() });
    }
    let coeffs = method.coefficients();
    let wm = w.matrix();
    let a = coeffs.a.eval_matrix(wm);
    let b_sq = coeffs.b_sq.eval_matrix(wm);
    let c = coeffs.c.eval_matrix(wm);
    let u = w.eigenvectors();
    let mut roots: Vec<f64> = w.eigenvalues().iter().map(|&l| method.b_eigenvalue(l)).collect();
    roots[0] = 0.0;
    let b = u * DMatrix::from_diagonal(&roots.into()) * u.transpose();
    let mm = MethodMatrices { method, a, b_sq, b, c, coeffs };
    check_null_space(&mm, w)?;
    Ok(mm)
}

/// Rejects triples whose `B` vanishes on a non-consensual direction.
pub fn check_null_space(mm: &MethodMatrices, w: &CombinationMatrix) -> Result<()> {
    for &l in &w.eigenvalues()[1..] {
        if mm.coeffs.b_sq.eval(l) <= EIG_TOL {
            return Err(Error::InvalidInput(format!(
                "{}: B vanishes on the eigenvector of eigenvalue {l}, so its null space is larger than the consensus subspace",
                mm.method
            )));
        }
    }
    Ok(())
}

/// Record of an automatic lazy shift applied to reach `W ⪰ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdShift {
    pub theta: f64,
    pub rate_before: f64,
    pub rate_after: f64,
}

/// Lazy weight applied when a diffusion-family method meets an indefinite `W`.
pub const DEFAULT_PSD_SHIFT: f64 = 0.5;

/// Returns `w` unchanged when PSD, otherwise `(1 − θ)W + θI`.
///
/// `theta` must be at least [`CombinationMatrix::psd_threshold`].
pub fn ensure_psd(w: CombinationMatrix, theta: f64) -> Result<(CombinationMatrix, Option<PsdShift>)> {
    if w.is_psd() {
        return Ok((w, None));
    }
    if theta + 1e-15 < w.psd_threshold() {
        return Err(Error::InvalidParameter(format!(
            "lazy weight {theta} does not make '{}' PSD (needs >= {})",
            w.label(),
            w.psd_threshold()
        )));
    }
    let shifted = lazy_shift(&w, theta)?;
    let shift = PsdShift { theta, rate_before: w.mixing_rate(), rate_after: shifted.mixing_rate() };
    Ok((shifted, Some(shift)))
}

/// JSON-ready summary of the spectral constants of one method on one topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub topology: String,
    pub method: Method,
    pub n: usize,
    pub lambda: f64,
    pub psd_shift: Option<PsdShift>,
    pub min_eigenvalue: f64,
    pub gamma: f64,
    pub lambda_a: f64,
    pub lambda_b_under: f64,
    pub v1: f64,
    pub v2: f64,
    pub lambda_under: Option<f64>,
    pub upsilon: f64,
    pub jordan_blocks: usize,
}

/// Builds the topology, applies the PSD shift if the method needs one, and
/// factorizes.
pub fn spectral_report(topology: &TopologySpec, method: Method) -> Result<SpectralReport> {
    let w = topology.build()?;
    let (w, psd_shift) = if method.requires_psd() {
        ensure_psd(w, DEFAULT_PSD_SHIFT)?
    } else {
        (w, None)
    };
    let mm = method_matrices(method, &w)?;
    let sc = factorize_g(&g_blocks(&mm, &w))?;
    Ok(SpectralReport {
        topology: topology.to_string(),
        method,
        n: w.n(),
        lambda: w.mixing_rate(),
        psd_shift,
        min_eigenvalue: w.min_eigenvalue(),
        gamma: sc.gamma,
        lambda_a: sc.lambda_a,
        lambda_b_under: sc.lambda_b_under,
        v1: sc.v1,
        v2: sc.v2,
        lambda_under: sc.lambda_under,
        upsilon: sc.upsilon(),
        jordan_blocks: sc.blocks.iter().filter(|b| b.jordan).count(),
    })
}
