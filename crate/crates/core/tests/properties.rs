//! Randomized invariants of the numerical and network building blocks.

use cmdf_core::network::{graph_metrics, metropolis_weights, random_geometric, slem, weight_power};
use cmdf_core::numerics::{dle_residual, norm2, solve_dare, solve_dle, spectral_radius, Matrix};
use proptest::prelude::*;

fn matrix(n: usize, vals: &[f64]) -> Matrix {
    Matrix::from_row_slice(n, n, &vals[..n * n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metropolis_is_doubly_stochastic(n in 2usize..25, seed in 0u64..1000) {
        let g = random_geometric(n, 100.0, 60.0, seed).unwrap();
        prop_assert!(graph_metrics(&g).connected);
        let w = metropolis_weights(&g).unwrap();
        let m = w.matrix();
        prop_assert!((m - m.transpose()).amax() < 1e-15);
        for i in 0..n {
            prop_assert!((m.row(i).sum() - 1.0).abs() < 1e-12);
            prop_assert!(m.row(i).iter().all(|&x| x >= 0.0));
        }
        let s = slem(&w).unwrap();
        prop_assert!(s < 1.0);
        let p = weight_power(&w, 25);
        for i in 0..n {
            prop_assert!((p.row(i).sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn dle_solution_satisfies_equation(n in 1usize..6, vals in prop::collection::vec(-1.0f64..1.0, 36)) {
        let f = matrix(n, &vals);
        let rho = spectral_radius(&f).unwrap();
        prop_assume!(rho > 1e-3);
        let f = f * (0.9 / rho);
        let w = Matrix::identity(n, n);
        let x = solve_dle(&f, &w).unwrap();
        prop_assert!(dle_residual(&f, &w, &x) <= 1e-10);
        prop_assert!(x.clone().cholesky().is_some());
    }

    #[test]
    fn dare_is_monotone_in_noise(n in 1usize..5, vals in prop::collection::vec(-1.5f64..1.5, 25), scale in 1.1f64..10.0) {
        let a = matrix(n, &vals);
        let c = Matrix::from_fn(1, n, |_, j| if j == 0 { 1.0 } else { vals[24 - j] });
        let q = Matrix::identity(n, n);
        let r = Matrix::identity(1, 1);
        let (Ok(p1), Ok(p2)) = (solve_dare(&a, &c, &q, &r), solve_dare(&a, &c, &q, &(&r * scale))) else {
            return Err(TestCaseError::reject("pair not detectable"));
        };
        let diff = &p2 - &p1;
        let lo = diff.symmetric_eigen().eigenvalues.min();
        prop_assert!(lo >= -1e-8 * norm2(&p2).max(1.0), "{lo}");
    }
}
