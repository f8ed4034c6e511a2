use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralConstants;

/// Step-size rule as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant {
        alpha: f64,
    },
    /// `α₀ · factor^⌊k / period⌋`.
    Halving {
        alpha: f64,
        #[serde(default = "default_period")]
        period: usize,
        #[serde(default = "default_factor")]
        factor: f64,
    },
    /// `α = 1/(2Lβ + σ√(K/n))`.
    Theorem1,
    /// `α = 2 ln(K²)/(μK)`, optionally capped by the admissible range of
    /// the linear-rate analysis.
    Theorem2 {
        #[serde(default)]
        cap: bool,
    },
}

fn default_period() -> usize {
    100
}

fn default_factor() -> f64 {
    0.5
}

/// Quantities that enter the theorem step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremParameters {
    pub l: f64,
    pub gamma: f64,
    pub v1: f64,
    pub v2: f64,
    pub lambda_a: f64,
    pub lambda_b_under: f64,
    /// Noise standard deviation per agent, `σ² = d σ_n²`.
    pub sigma: f64,
    pub iterations: usize,
    pub n: usize,
    pub mu: Option<f64>,
}

impl TheoremParameters {
    pub fn new(l: f64, sc: &SpectralConstants, sigma: f64, iterations: usize, n: usize, mu: Option<f64>) -> Self {
        Self {
            l,
            gamma: sc.gamma,
            v1: sc.v1,
            v2: sc.v2,
            lambda_a: sc.lambda_a,
            lambda_b_under: sc.lambda_b_under,
            sigma,
            iterations,
            n,
            mu,
        }
    }

    /// `β = 1 + v₁v₂λ_a/(1−γ) + √(v₁v₂λ_a)/√(λ̲_b(1−γ))`.
    pub fn beta(&self) -> f64 {
        let gap = 1.0 - self.gamma;
        let prod = self.v1 * self.v2 * self.lambda_a;
        1.0 + prod / gap + prod.sqrt() / (self.lambda_b_under * gap).sqrt()
    }

    pub fn theorem1_alpha(&self) -> f64 {
        1.0 / (2.0 * self.l * self.beta() + self.sigma * (self.iterations as f64 / self.n as f64).sqrt())
    }

    /// Largest step size admitted by the linear-rate analysis under PL.
    pub fn linear_rate_bound(&self) -> Option<f64> {
        let mu = self.mu?;
        let (l, gap, lb) = (self.l, 1.0 - self.gamma, self.lambda_b_under);
        let prod = self.v1 * self.v2 * self.lambda_a;
        let cubic = (mu * lb * lb * gap / (8.0 * l.powi(4) * self.v1.powi(2) * self.v2.powi(2))).cbrt();
        Some(
            (gap / (3.0 * l))
                .min(lb / (2.0 * l))
                .min(gap / (6f64.sqrt() * l * prod))
                .min(cubic),
        )
    }

    pub fn theorem2_alpha(&self) -> Option<f64> {
        let mu = self.mu?;
        let k = self.iterations as f64;
        Some(2.0 * (k * k).ln() / (mu * k))
    }
}

/// Resolved step-size sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSchedule {
    pub spec: ScheduleSpec,
    pub alpha0: f64,
    pub theorem: Option<TheoremParameters>,
    pub linear_rate_bound: Option<f64>,
}

impl StepSchedule {
    /// Resolves `spec`; the theorem rules need `params`.
    pub fn resolve(spec: &ScheduleSpec, params: Option<TheoremParameters>) -> Result<Self> {
        let need = |what: &str| {
            params.ok_or_else(|| Error::Config(format!("{what} step sizes need a primal-dual method with spectral constants")))
        };
        let (alpha0, theorem, bound) = match spec {
            ScheduleSpec::Constant { alpha } => (*alpha, params, None),
            ScheduleSpec::Halving { alpha, period, factor } => {
                if *period == 0 || !(*factor > 0.0 && *factor <= 1.0) {
                    return Err(Error::Config(format!("halving needs period >= 1 and factor in (0, 1], got {period}, {factor}")));
                }
                (*alpha, params, None)
            }
            ScheduleSpec::Theorem1 => {
                let p = need("theorem-1")?;
                (p.theorem1_alpha(), Some(p), None)
            }
            ScheduleSpec::Theorem2 { cap } => {
                let p = need("theorem-2")?;
                if p.iterations < 2 {
                    return Err(Error::Config("theorem-2 step sizes need at least 2 iterations".into()));
                }
                let alpha = p.theorem2_alpha().ok_or_else(|| Error::Config("theorem-2 step sizes need a PL constant".into()))?;
                let bound = p.linear_rate_bound();
                let alpha = match (cap, bound) {
                    (true, Some(b)) => alpha.min(b),
                    _ => alpha,
                };
                (alpha, Some(p), bound)
            }
        };
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(Error::Config(format!("step size must be positive and finite, got {alpha0}")));
        }
        Ok(Self { spec: spec.clone(), alpha0, theorem, linear_rate_bound: bound })
    }

    pub fn constant(alpha: f64) -> Self {
        Self { spec: ScheduleSpec::Constant { alpha }, alpha0: alpha, theorem: None, linear_rate_bound: None }
    }

    pub fn alpha_at(&self, k: usize) -> f64 {
        match self.spec {
            ScheduleSpec::Halving { period, factor, .. } => self.alpha0 * factor.powi((k / period) as i32),
            _ => self.alpha0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TheoremParameters {
        TheoremParameters {
            l: 2.0,
            gamma: 0.5,
            v1: 2.0,
            v2: 1.0,
            lambda_a: 0.5,
            lambda_b_under: 0.25,
            sigma: 0.3,
            iterations: 400,
            n: 4,
            mu: Some(0.5),
        }
    }

    #[test]
    fn theorem1_formula() {
        let p = params();
        // β = 1 + 1/0.5 + 1/√(0.125) = 3 + 2√2.
        let beta = 3.0 + 2.0 * 2f64.sqrt();
        assert!((p.beta() - beta).abs() < 1e-12);
        let alpha = 1.0 / (4.0 * beta + 0.3 * 10.0);
        let s = StepSchedule::resolve(&ScheduleSpec::Theorem1, Some(p)).unwrap();
        assert!((s.alpha_at(123) - alpha).abs() < 1e-15);
        assert!(s.alpha0 <= 1.0 / (2.0 * p.l));
    }

    #[test]
    fn theorem2_formula_and_cap() {
        let p = params();
        let s = StepSchedule::resolve(&ScheduleSpec::Theorem2 { cap: false }, Some(p)).unwrap();
        assert!((s.alpha0 - 2.0 * (160_000f64).ln() / 200.0).abs() < 1e-12);
        let capped = StepSchedule::resolve(&ScheduleSpec::Theorem2 { cap: true }, Some(p)).unwrap();
        assert!(capped.alpha0 <= s.linear_rate_bound.unwrap());
    }

    #[test]
    fn halving_schedule() {
        let s = StepSchedule::resolve(&ScheduleSpec::Halving { alpha: 0.08, period: 100, factor: 0.5 }, None).unwrap();
        assert_eq!(s.alpha_at(99), 0.08);
        assert_eq!(s.alpha_at(100), 0.04);
        assert_eq!(s.alpha_at(350), 0.01);
    }

    #[test]
    fn invalid_schedules() {
        assert!(StepSchedule::resolve(&ScheduleSpec::Constant { alpha: 0.0 }, None).is_err());
        assert!(StepSchedule::resolve(&ScheduleSpec::Theorem1, None).is_err());
        assert!(StepSchedule::resolve(&ScheduleSpec::Halving { alpha: 0.1, period: 0, factor: 0.5 }, None).is_err());
    }
}
