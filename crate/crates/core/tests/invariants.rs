use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use suda_core::diagnostics::heterogeneity_stats;
use suda_core::problems::{gen_logistic, gen_pl_toy, gen_quadratic, Problem};
use suda_core::spectral::{ensure_psd, factorize_g, method_matrices, psd_sqrt, GBlocks, Method};
use suda_core::topology::{build_erdos_renyi, lazy_shift, metropolis_weights, CombinationMatrix};

fn er(n: usize, p: f64, seed: u64) -> CombinationMatrix {
    metropolis_weights(&build_erdos_renyi(n, p, seed).unwrap()).unwrap()
}

fn sorted_eigs(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn method() -> impl Strategy<Value = Method> {
    prop::sample::select(Method::ALL.to_vec())
}

fn problem(kind: u8, n: usize, sigma_h2: f64, seed: u64) -> Problem {
    match kind {
        0 => gen_logistic(n, 3, 25, 0.001, sigma_h2, seed).unwrap(),
        1 => gen_pl_toy(n, sigma_h2).unwrap(),
        _ => gen_quadratic(n, 3, sigma_h2, 0.5, seed).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn metropolis_is_symmetric_doubly_stochastic(n in 3usize..24, p in 0.3f64..1.0, seed in 0u64..1000) {
        let w = er(n, p, seed);
        let m = w.matrix();
        prop_assert!((m - m.transpose()).amax() < 1e-15);
        for i in 0..n {
            prop_assert!((m.row(i).sum() - 1.0).abs() < 1e-12);
            prop_assert!(m.row(i).iter().all(|&v| v >= 0.0));
        }
        prop_assert!(w.mixing_rate() < 1.0);
        prop_assert!((w.eigenvalues()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lazy_shift_maps_eigenvalues(n in 3usize..20, p in 0.3f64..1.0, seed in 0u64..1000, theta in 0.01f64..1.0) {
        let w = er(n, p, seed);
        let s = lazy_shift(&w, theta).unwrap();
        let before = sorted_eigs(w.matrix());
        let after = sorted_eigs(s.matrix());
        for (a, b) in before.iter().zip(&after) {
            prop_assert!(((1.0 - theta) * a + theta - b).abs() < 1e-10);
        }
        if w.is_psd() {
            // On a PSD matrix the shift moves every eigenvalue towards 1.
            prop_assert!(s.mixing_rate() >= w.mixing_rate() - 1e-12);
        }
    }

    #[test]
    fn psd_sqrt_squares_back(n in 2usize..12, seed in 0u64..1000) {
        let w = ensure_psd(er(n, 0.6, seed), 0.5).unwrap().0;
        let m = DMatrix::identity(n, n) - w.matrix();
        let r = psd_sqrt(&m).unwrap();
        prop_assert!((&r * &r - &m).amax() < 1e-10);
        prop_assert!((&r - r.transpose()).amax() < 1e-12);
        prop_assert!(sorted_eigs(&r)[0] > -1e-10);
    }

    #[test]
    fn block_factorization_reconstructs(m in method(), eigs in prop::collection::vec(0.0f64..0.999, 1..12)) {
        let sc = factorize_g(&GBlocks::from_eigenvalues(m, &eigs)).unwrap();
        prop_assert!(sc.max_reconstruction_error() <= 1e-9);
        prop_assert!(sc.blocks.iter().all(|b| b.spectral_radius() < 1.0));
        prop_assert!(sc.gamma < 1.0 && sc.v1 >= 1.0 - 1e-12 && sc.v2 > 0.0);
    }

    #[test]
    fn gradients_match_central_differences(kind in 0u8..3, seed in 0u64..500, xs in prop::collection::vec(-3.0f64..3.0, 3)) {
        let p = problem(kind, 4, 0.7, seed);
        let x = DVector::from_fn(p.d(), |j, _| xs[j]);
        for i in 0..p.n() {
            let g = p.grad(i, &x).unwrap();
            for j in 0..p.d() {
                let h = 1e-5 * (1.0 + x[j].abs());
                let (mut a, mut b) = (x.clone(), x.clone());
                a[j] += h;
                b[j] -= h;
                let fd = (p.value(i, &a).unwrap() - p.value(i, &b).unwrap()) / (2.0 * h);
                prop_assert!((g[j] - fd).abs() <= 1e-6 * g.norm().max(1.0), "agent {i} coord {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn heterogeneity_bounded_by_lambda_a(m in method(), kind in 0u8..3, n in 4usize..14, h2 in 0.0f64..3.0, seed in 0u64..500) {
        let n = n + n % 2;
        let w = ensure_psd(er(n, 0.5, seed), 0.5).unwrap().0;
        let p = problem(kind, n, h2, seed);
        let x0 = DMatrix::from_fn(p.d(), n, |r, _| 0.3 * r as f64 - 0.2);
        let s = heterogeneity_stats(&p, &x0, &method_matrices(m, &w).unwrap()).unwrap();
        prop_assert!(s.holds);
        prop_assert!(s.zeta0_sq <= s.lambda_a * s.lambda_a * s.varsigma0_sq * (1.0 + 1e-10) + 1e-14);
    }

    #[test]
    fn deviation_from_average_equals_projection(n in 3usize..16, seed in 0u64..500, d in 1usize..5) {
        let w = er(n, 0.5, seed);
        let x = DMatrix::from_fn(d, n, |r, c| ((r * 7 + c * 13 + seed as usize) % 11) as f64 - 5.0);
        let mean = x.column_mean();
        let dev: f64 = x.column_iter().map(|c| (c - &mean).norm_squared()).sum();
        let proj = (&x * w.u_hat()).norm_squared();
        prop_assert!((dev - proj).abs() <= 1e-10 * (1.0 + dev));
    }
}
