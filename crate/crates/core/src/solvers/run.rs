use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::{ScheduleSpec, StepSchedule, TheoremParameters};
use super::{divergence_guard, dsgd_update, explicit_step, psgd_update, suda_update, Algorithm, NetworkState};
use crate::diagnostics::{
    consensus_bound, consensus_recursion_residual, descent_bound, transformed_error_with, ConstantsSummary, NoiseRecord,
    RecordRow, RunRecord, StepSnapshot, TransformedError,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::problems::{
    reference_optimum_cached, save_dataset, GradOracle, Problem, ProblemSpec, ReferenceOptimum,
};
use crate::spectral::{ensure_psd, factorize_g, g_blocks, method_matrices, MethodMatrices, SpectralConstants, DEFAULT_PSD_SHIFT};
use crate::topology::{CombinationMatrix, TopologySpec};

/// Which implementation of a primal-dual method to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Form {
    /// The unified primal-dual recursion with the method's matrix triple.
    #[default]
    Suda,
    /// The method's own published recursion.
    Explicit,
}

/// One run: method, network, data, step sizes and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Algorithm,
    #[serde(default)]
    pub form: Form,
    pub topology: TopologySpec,
    /// Lazy weight applied when a diffusion-family method meets an
    /// indefinite `W`.
    #[serde(default = "default_psd_shift")]
    pub psd_shift: f64,
    pub problem: ProblemSpec,
    pub schedule: ScheduleSpec,
    pub iterations: usize,
    /// Defaults to 1 for up to 64 agents and 10 beyond.
    #[serde(default)]
    pub record_every: Option<usize>,
    #[serde(default)]
    pub sigma_n2: f64,
    /// Seed of the gradient noise (and of the random start outside theorem mode).
    #[serde(default)]
    pub seed: u64,
    /// Start every agent at the same point `x0`; otherwise agents start at
    /// `x0 + N(0, I)`.
    #[serde(default = "yes")]
    pub theorem_mode: bool,
    #[serde(default)]
    pub x0: f64,
    /// Track the transformed error and the inequality residuals.
    #[serde(default = "yes")]
    pub monitors: bool,
    /// Record `(1/n) Σ f(x_i) − f*`; costs `n` full objective evaluations
    /// per recorded iteration.
    #[serde(default = "yes")]
    pub mean_suboptimality: bool,
    #[serde(default)]
    pub label: Option<String>,
}

fn default_psd_shift() -> f64 {
    DEFAULT_PSD_SHIFT
}

fn yes() -> bool {
    true
}

impl RunConfig {
    /// A noise-free constant-step configuration with monitors on.
    pub fn new(method: Algorithm, topology: TopologySpec, problem: ProblemSpec, alpha: f64, iterations: usize) -> Self {
        Self {
            method,
            form: Form::Suda,
            topology,
            psd_shift: DEFAULT_PSD_SHIFT,
            problem,
            schedule: ScheduleSpec::Constant { alpha },
            iterations,
            record_every: None,
            sigma_n2: 0.0,
            seed: 0,
            theorem_mode: true,
            x0: 0.0,
            monitors: true,
            mean_suboptimality: true,
            label: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| format!("{}@{}", self.method, self.topology))
    }

    pub fn record_every(&self) -> usize {
        self.record_every.unwrap_or(if self.topology.n() <= 64 { 1 } else { 10 }).max(1)
    }
}

/// Problem data and reference value shared by the runs of a suite.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub problem: Problem,
    pub reference: Option<ReferenceOptimum>,
}

impl RunContext {
    pub fn new(problem: Problem, reference: Option<ReferenceOptimum>) -> Self {
        Self { problem, reference }
    }

    /// Generates the data for `n` agents and its reference optimum, using
    /// `cache` for the dataset file and the memoized `f*`.
    ///
    /// When `f*` cannot be computed the suboptimality metrics are left empty.
    pub fn prepare(spec: &ProblemSpec, n: usize, cache: Option<&Path>) -> Result<Self> {
        let problem = spec.generate(n)?;
        if let Some(dir) = cache {
            let path = dir.join(format!("{}.bin", problem.cache_stem()));
            if !path.exists() {
                save_dataset(&problem, &path)?;
            }
        }
        let reference = match reference_optimum_cached(&problem, cache) {
            Ok(r) => Some(r),
            Err(Error::Unavailable(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { problem, reference })
    }
}

/// Generates the data and runs `cfg`.
pub fn run(cfg: &RunConfig) -> Result<RunRecord> {
    let ctx = RunContext::prepare(&cfg.problem, cfg.topology.n(), None)?;
    run_with(cfg, &ctx, Execution::default())
}

struct Setup {
    w: CombinationMatrix,
    psd_shift: Option<crate::spectral::PsdShift>,
    mm: Option<MethodMatrices>,
    sc: Option<SpectralConstants>,
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let w = cfg.topology.build()?;
    let (w, psd_shift) = match cfg.method.method() {
        Some(m) if m.requires_psd() => ensure_psd(w, cfg.psd_shift)?,
        _ => (w, None),
    };
    let (mm, sc) = match cfg.method.method() {
        Some(m) => {
            let mm = method_matrices(m, &w)?;
            let sc = factorize_g(&g_blocks(&mm, &w))?;
            (Some(mm), Some(sc))
        }
        None => (None, None),
    };
    Ok(Setup { w, psd_shift, mm, sc })
}

fn initial_point(cfg: &RunConfig, n: usize, d: usize) -> DMatrix<f64> {
    if cfg.theorem_mode {
        return DMatrix::from_element(d, n, cfg.x0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_57A7);
    DMatrix::from_fn(d, n, |_, _| cfg.x0 + rng.sample::<f64, _>(StandardNormal))
}

struct Observation {
    row: RecordRow,
    gbar: DMatrix<f64>,
    e: Option<TransformedError>,
}

/// Executes `cfg` on prepared data.
///
/// Per-agent gradients are evaluated according to `exec`; the result does
/// not depend on it.
pub fn run_with(cfg: &RunConfig, ctx: &RunContext, exec: Execution) -> Result<RunRecord> {
    let started = Instant::now();
    let problem = &ctx.problem;
    let n = cfg.topology.n();
    let d = problem.d();
    if problem.n() != n {
        return Err(Error::Config(format!("problem has {} agents but topology '{}' has {n}", problem.n(), cfg.topology)));
    }
    if cfg.form == Form::Explicit && cfg.method.method().is_none() {
        return Err(Error::Config(format!("{} has no explicit form", cfg.method)));
    }
    let Setup { w, psd_shift, mm, sc } = setup(cfg)?;
    let l = problem.l_smooth();
    let params = sc
        .as_ref()
        .map(|sc| TheoremParameters::new(l, sc, (d as f64 * cfg.sigma_n2).sqrt(), cfg.iterations, n, problem.pl_constant().ok()));
    let schedule = StepSchedule::resolve(&cfg.schedule, params)?;
    let oracle = GradOracle::new(problem, cfg.sigma_n2, cfg.seed)?.with_execution(exec);
    let exact = GradOracle::new(problem, 0.0, 0)?.with_execution(exec);
    let f_star = ctx.reference.as_ref().map(|r| r.value);
    let constants = sc.as_ref().map(ConstantsSummary::from);
    let monitored = cfg.monitors && cfg.form == Form::Suda && sc.is_some();
    let u_hat = monitored.then(|| w.u_hat());
    let noise_free = cfg.sigma_n2 == 0.0;

    let observe = |state: &NetworkState, k: usize| -> Result<Observation> {
        let xbar = state.average();
        let gbar = exact.evaluate_at(&xbar, k).exact;
        let at_x = exact.evaluate(&state.x, k).exact;
        let f_avg = problem.global_value(xbar.as_slice());
        let e = match (&u_hat, &mm, &sc) {
            (Some(u), Some(mm), Some(sc)) => Some(transformed_error_with(state, mm, sc, u, &gbar, schedule.alpha_at(k))?),
            _ => None,
        };
        let subopt_mean = match (cfg.mean_suboptimality, f_star) {
            (true, Some(fs)) => {
                let values = exec.map(n, |i| {
                    let xi: Vec<f64> = state.x.column(i).iter().copied().collect();
                    problem.global_value(&xi)
                });
                Some(values.iter().sum::<f64>() / n as f64 - fs)
            }
            _ => None,
        };
        let row = RecordRow {
            k,
            grad_norm_avg_sq: problem.global_grad(xbar.as_slice()).norm_squared(),
            avg_grad_norm_sq: at_x.column_mean().norm_squared(),
            consensus_sq: state.consensus_error_sq(),
            subopt_avg: f_star.map(|fs| f_avg - fs),
            subopt_mean,
            e_hat_sq: e.as_ref().map(TransformedError::norm_sq),
            descent_resid: None,
            recursion_resid: None,
            consensus_resid: None,
            alpha: schedule.alpha_at(k),
            f_avg,
            wall_time: 0.0,
        };
        Ok(Observation { row, gbar, e })
    };

    let every = cfg.record_every();
    let recorded = |k: usize| k % every == 0 || k == cfg.iterations;
    let mut state = NetworkState::new(initial_point(cfg, n, d));
    let mut rows = Vec::new();
    let mut snapshot: Option<StepSnapshot> = None;
    for k in 0..=cfg.iterations {
        let record_now = recorded(k);
        let snap_now = monitored && k < cfg.iterations && recorded(k + 1);
        let obs = if record_now || snap_now { Some(observe(&state, k)?) } else { None };
        if record_now {
            let obs = obs.as_ref().expect("observed at recorded iterations");
            let mut row = obs.row.clone();
            if let (Some(prev), Some(e), Some(sc), Some(u), Some(c)) = (&snapshot, &obs.e, &sc, &u_hat, &constants) {
                row.recursion_resid = Some(consensus_recursion_residual(prev, e, &obs.gbar, sc, u)?);
                if noise_free {
                    let e_prev = prev.e.norm_sq();
                    row.descent_resid = Some(row.f_avg - descent_bound(&prev.row, e_prev, l, c, n));
                    row.consensus_resid = Some(e.norm_sq() - consensus_bound(&prev.row, e_prev, l, c, n));
                }
            }
            row.wall_time = started.elapsed().as_secs_f64();
            rows.push(row);
        }
        if k == cfg.iterations {
            break;
        }
        let alpha = schedule.alpha_at(k);
        let next = match (cfg.method, cfg.form) {
            (Algorithm::Suda(m), Form::Explicit) => explicit_step(m, &state, &w, alpha, &oracle)?,
            (Algorithm::Suda(_), Form::Suda) => {
                let block = oracle.evaluate(&state.x, k);
                let next = suda_update(&state, mm.as_ref().expect("primal-dual method"), alpha, &block.stochastic())?;
                snapshot = match (snap_now, obs) {
                    (true, Some(obs)) => Some(StepSnapshot {
                        k,
                        alpha,
                        e: obs.e.expect("monitored runs compute the transformed error"),
                        noise: match block.noise {
                            Some(w) => NoiseRecord::Retained(w),
                            None => NoiseRecord::Exact,
                        },
                        grads: block.exact,
                        gbar: obs.gbar,
                        row: obs.row,
                    }),
                    _ => None,
                };
                next
            }
            (Algorithm::Dsgd, _) => {
                let grads = oracle.evaluate(&state.x, k).stochastic();
                dsgd_update(&state, &w, alpha, &grads)?
            }
            (Algorithm::Psgd, _) => {
                let grads = oracle.evaluate_at(&state.average(), k).stochastic();
                psgd_update(&state, alpha, &grads)
            }
        };
        divergence_guard(&next.x, k + 1)?;
        state = next;
    }

    Ok(RunRecord {
        label: cfg.label(),
        algorithm: cfg.method,
        form: cfg.form,
        topology: cfg.topology.to_string(),
        seed: cfg.seed,
        n,
        d,
        sigma_n2: cfg.sigma_n2,
        lambda: w.mixing_rate(),
        psd_shift,
        l_smooth: l,
        f_star,
        f_star_source: ctx.reference.as_ref().map(|r| r.provenance.clone()),
        schedule,
        constants,
        rows,
    })
}
