use suda_core::diagnostics::{consensus_monitor, descent_monitor, RECURSION_TOL};
use suda_core::problems::{ProblemKind, ProblemSpec};
use suda_core::solvers::{run, Algorithm, RunConfig, ScheduleSpec};
use suda_core::spectral::Method;
use suda_core::Error;

fn quadratic() -> ProblemSpec {
    ProblemSpec {
        kind: ProblemKind::Quadratic,
        d: 4,
        samples: 0,
        rho: 0.0,
        sigma_h2: 2.0,
        curvature_spread: 0.5,
        seed: 5,
    }
}

fn config(method: Method, schedule: ScheduleSpec, iterations: usize, sigma_n2: f64) -> RunConfig {
    let mut cfg = RunConfig::new(Algorithm::Suda(method), "ring:8".parse().unwrap(), quadratic(), 0.01, iterations);
    cfg.schedule = schedule;
    cfg.sigma_n2 = sigma_n2;
    cfg.x0 = 1.0;
    cfg
}

#[test]
fn no_descent_violations_at_theorem_step_size() {
    for m in Method::ALL {
        let rec = run(&config(m, ScheduleSpec::Theorem1, 500, 0.0)).unwrap();
        let c = rec.constants.unwrap();
        assert!(rec.schedule.alpha0 <= 1.0 / (2.0 * rec.l_smooth));
        let v = descent_monitor(&rec, rec.l_smooth, &c).unwrap();
        assert!(v.is_empty(), "{m}: {v:?}");
        let v = consensus_monitor(&rec, rec.l_smooth, &c).unwrap();
        assert!(v.is_empty(), "{m}: {v:?}");
    }
}

#[test]
fn oversized_step_reports_violations() {
    let probe = run(&config(Method::AtcGt, ScheduleSpec::Theorem1, 0, 0.0)).unwrap();
    let alpha = 10.0 / probe.l_smooth;
    let mut cfg = config(Method::AtcGt, ScheduleSpec::Constant { alpha }, 30, 0.0);
    cfg.theorem_mode = false;
    match run(&cfg) {
        Ok(rec) => {
            let v = descent_monitor(&rec, rec.l_smooth, &rec.constants.unwrap()).unwrap();
            assert!(!v.is_empty());
        }
        Err(Error::NumericOverflow { .. }) => {}
        Err(e) => panic!("unexpected {e}"),
    }
}

#[test]
fn recursion_identity_along_runs() {
    for m in [Method::ExactDiffusion, Method::AtcGt] {
        for sigma in [0.0, 0.01] {
            let rec = run(&config(m, ScheduleSpec::Constant { alpha: 0.05 }, 100, sigma)).unwrap();
            for r in &rec.rows[1..] {
                let resid = r.recursion_resid.unwrap();
                assert!(resid <= RECURSION_TOL * (1.0 + r.e_hat_sq.unwrap().sqrt()), "{m} σ={sigma} k={}: {resid:e}", r.k);
            }
        }
    }
}

#[test]
fn monitors_reject_noisy_runs() {
    let rec = run(&config(Method::AtcGt, ScheduleSpec::Constant { alpha: 0.05 }, 5, 0.01)).unwrap();
    assert!(matches!(descent_monitor(&rec, 1.0, &rec.constants.unwrap()), Err(Error::NotApplicable(_))));
}

#[test]
fn stationary_start_meets_descent_bound_with_equality() {
    let spec = ProblemSpec { kind: ProblemKind::PlToy, d: 1, samples: 0, rho: 0.0, sigma_h2: 0.0, curvature_spread: 0.0, seed: 0 };
    let cfg = RunConfig::new(Algorithm::Suda(Method::AtcGt), "ring:8".parse().unwrap(), spec, 0.05, 10);
    let rec = run(&cfg).unwrap();
    for r in &rec.rows[1..] {
        assert!(r.descent_resid.unwrap().abs() < 1e-12);
        assert_eq!(r.e_hat_sq, Some(0.0));
    }
}

#[test]
fn runs_are_deterministic_and_k0_has_only_initial_metrics() {
    let cfg = config(Method::ExactDiffusion, ScheduleSpec::Constant { alpha: 0.05 }, 40, 0.01);
    let strip = |mut r: suda_core::diagnostics::RunRecord| {
        r.rows.iter_mut().for_each(|row| row.wall_time = 0.0);
        r
    };
    assert_eq!(strip(run(&cfg).unwrap()), strip(run(&cfg).unwrap()));
    let rec = run(&config(Method::AtcGt, ScheduleSpec::Constant { alpha: 0.05 }, 0, 0.0)).unwrap();
    assert_eq!(rec.rows.len(), 1);
    assert_eq!(rec.rows[0].k, 0);
    assert!(rec.rows[0].descent_resid.is_none());
}

#[test]
fn explicit_form_runs_without_monitors() {
    let mut cfg = config(Method::Extra, ScheduleSpec::Constant { alpha: 0.05 }, 20, 0.0);
    cfg.form = suda_core::solvers::Form::Explicit;
    let rec = run(&cfg).unwrap();
    assert!(rec.rows.iter().all(|r| r.e_hat_sq.is_none()));
    assert!(rec.psd_shift.is_some());
}
