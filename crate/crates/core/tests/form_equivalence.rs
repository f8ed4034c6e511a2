use nalgebra::DMatrix;
use suda_core::problems::{gen_quadratic, GradOracle};
use suda_core::solvers::{explicit_step, suda_step, NetworkState};
use suda_core::spectral::{ensure_psd, method_matrices, Method, DEFAULT_PSD_SHIFT};
use suda_core::topology::{build_ring, metropolis_weights};

fn max_relative_gap(method: Method, sigma_n2: f64, steps: usize) -> f64 {
    let w = metropolis_weights(&build_ring(8).unwrap()).unwrap();
    let (w, _) = if method.requires_psd() { ensure_psd(w, DEFAULT_PSD_SHIFT).unwrap() } else { (w, None) };
    let p = gen_quadratic(8, 5, 1.0, 0.5, 11).unwrap();
    let oracle = GradOracle::new(&p, sigma_n2, 3).unwrap();
    let mm = method_matrices(method, &w).unwrap();
    // The tracking recursions coincide with their primal-dual form only from
    // a consensual start; the diffusion family from any start.
    let x0 = if method.requires_psd() {
        DMatrix::from_fn(5, 8, |r, c| ((3 * r + 5 * c) % 7) as f64 * 0.3 - 1.0)
    } else {
        DMatrix::from_fn(5, 8, |r, _| r as f64 * 0.3 - 1.0)
    };
    let mut a = NetworkState::new(x0.clone());
    let mut b = NetworkState::new(x0);
    let mut worst = 0.0_f64;
    for _ in 0..steps {
        a = suda_step(&a, &mm, 0.01, &oracle).unwrap();
        b = explicit_step(method, &b, &w, 0.01, &oracle).unwrap();
        worst = worst.max((&a.x - &b.x).amax() / (1.0 + a.x.amax()));
    }
    worst
}

#[test]
fn primal_dual_matches_published_recursions() {
    for m in Method::ALL {
        let gap = max_relative_gap(m, 0.0, 200);
        assert!(gap <= 1e-9, "{m}: {gap:e}");
    }
}

#[test]
fn equivalence_holds_pathwise_with_shared_noise() {
    for m in Method::ALL {
        let gap = max_relative_gap(m, 0.05, 150);
        assert!(gap <= 1e-9, "{m}: {gap:e}");
    }
}

#[test]
fn tracker_average_equals_gradient_average() {
    let w = metropolis_weights(&build_ring(6).unwrap()).unwrap();
    let p = gen_quadratic(6, 3, 1.0, 0.5, 2).unwrap();
    let oracle = GradOracle::new(&p, 0.1, 8).unwrap();
    for m in [Method::AtcGt, Method::NonAtcGt, Method::SemiAtcGtX, Method::SemiAtcGtG] {
        let mut s = NetworkState::new(DMatrix::from_fn(3, 6, |r, c| (r + c) as f64));
        for _ in 0..50 {
            s = explicit_step(m, &s, &w, 0.05, &oracle).unwrap();
            let g = s.g.as_ref().unwrap().column_mean();
            let grad = s.grad_prev.as_ref().unwrap().column_mean();
            assert!((g - grad).amax() < 1e-12, "{m}");
        }
    }
}

#[test]
fn average_follows_mean_stochastic_gradient() {
    let w = metropolis_weights(&build_ring(6).unwrap()).unwrap();
    let p = gen_quadratic(6, 3, 1.0, 0.5, 2).unwrap();
    let oracle = GradOracle::new(&p, 0.1, 8).unwrap();
    for m in Method::ALL {
        let (w, _) = if m.requires_psd() { ensure_psd(w.clone(), 0.5).unwrap() } else { (w.clone(), None) };
        let mm = method_matrices(m, &w).unwrap();
        let mut s = NetworkState::new(DMatrix::from_fn(3, 6, |r, c| (r * c) as f64 * 0.1));
        for _ in 0..40 {
            let g = oracle.evaluate(&s.x, s.k).stochastic().column_mean();
            let expected = s.average() - g * 0.05;
            s = suda_step(&s, &mm, 0.05, &oracle).unwrap();
            assert!((s.average() - expected).amax() < 1e-12, "{m}");
        }
    }
}

#[test]
fn explicit_diffusion_refuses_indefinite_matrix() {
    let w = metropolis_weights(&build_ring(8).unwrap()).unwrap();
    let p = gen_quadratic(8, 2, 1.0, 0.5, 2).unwrap();
    let oracle = GradOracle::new(&p, 0.0, 0).unwrap();
    let s = NetworkState::new(DMatrix::zeros(2, 8));
    assert!(explicit_step(Method::Extra, &s, &w, 0.1, &oracle).is_err());
}
