use gbmsde::integrators::tame;
use gbmsde::{matrix_exp, DMatrix, DVector, LinearFlow, WienerLattice};
use proptest::prelude::*;

fn vector(max_dim: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, 1..=max_dim)
}

fn diag_system() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (1usize..5, 1usize..4).prop_flat_map(|(d, m)| {
        (
            prop::collection::vec(-2.0..1.0f64, d),
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, d), m),
        )
    })
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

proptest! {
    #[test]
    fn tamed_drift_is_bounded(f in vector(6, 1e6), dt in 1e-6..2.0f64) {
        let f = DVector::from_vec(f);
        let t = tame(&f, dt);
        prop_assert!(t.norm() <= f.norm());
        prop_assert!(t.norm() <= 1.0 / dt);
        // taming never changes direction
        prop_assert!((t.clone() * (1.0 + dt * f.norm()) - &f).norm() <= 1e-9 * f.norm().max(1.0));
    }

    #[test]
    fn diagonal_flow_semigroup((a, bs) in diag_system(), dt1 in 0.001..0.5f64, dt2 in 0.001..0.5f64,
                               z in prop::collection::vec(-3.0..3.0f64, 6)) {
        let b: Vec<DMatrix<f64>> = bs.iter().map(|v| diag(v)).collect();
        let flow = LinearFlow::new(&diag(&a), &b).unwrap();
        let m = b.len();
        let dw1: Vec<f64> = (0..m).map(|j| z[j] * dt1.sqrt()).collect();
        let dw2: Vec<f64> = (0..m).map(|j| z[j + 3] * dt2.sqrt()).collect();
        let sum: Vec<f64> = dw1.iter().zip(&dw2).map(|(x, y)| x + y).collect();
        let split = flow.flow(dt1, &dw1).unwrap().compose(&flow.flow(dt2, &dw2).unwrap());
        let whole = flow.flow(dt1 + dt2, &sum).unwrap();
        prop_assert!((split.to_dense() - whole.to_dense()).norm() <= 1e-12);
    }

    #[test]
    fn flow_inverse_is_inverse((a, bs) in diag_system(), dt in 0.001..1.0f64, z in -3.0..3.0f64) {
        let b: Vec<DMatrix<f64>> = bs.iter().map(|v| diag(v)).collect();
        let flow = LinearFlow::new(&diag(&a), &b).unwrap();
        let dw = vec![z * dt.sqrt(); b.len()];
        let prod = flow.flow(dt, &dw).unwrap().compose(&flow.inverse(dt, &dw).unwrap()).to_dense();
        let eye = DMatrix::identity(a.len(), a.len());
        prop_assert!((prod - eye).norm() <= 1e-12);
    }

    #[test]
    fn matrix_exp_matches_nalgebra(entries in prop::collection::vec(-3.0..3.0f64, 16), scale in 0.01..4.0f64) {
        let m = DMatrix::from_column_slice(4, 4, &entries) * scale;
        let ours = matrix_exp(&m).unwrap();
        let oracle = m.clone().exp();
        prop_assert!((&ours - &oracle).norm() <= 1e-10 * oracle.norm().max(1.0),
            "difference {}", (&ours - &oracle).norm());
    }

    #[test]
    fn coarse_increments_are_sums(seed in any::<u64>(), path in 0u64..1000, drivers in 1usize..4, k in 0u32..6) {
        let steps = 64;
        let lattice = WienerLattice::sample(seed, path, drivers, steps, 1.0).unwrap();
        let factor = 1usize << k;
        let coarse = lattice.coarsen(factor).unwrap();
        prop_assert_eq!(coarse.steps(), steps / factor);
        for n in 0..coarse.steps() {
            let direct = lattice.increment_over(n * factor, (n + 1) * factor).unwrap();
            prop_assert_eq!(coarse.step(n), direct.as_slice());
            for j in 0..drivers {
                let manual: f64 = (n * factor..(n + 1) * factor).map(|i| lattice.step(i)[j]).sum();
                prop_assert!((coarse.step(n)[j] - manual).abs() <= 1e-14);
            }
        }
        let total: Vec<f64> = (0..drivers).map(|j| lattice.path(j)[steps]).collect();
        let whole = lattice.increment_over(0, steps).unwrap();
        for j in 0..drivers {
            prop_assert!((total[j] - whole[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn lattice_is_deterministic(seed in any::<u64>(), path in any::<u64>()) {
        let a = WienerLattice::sample(seed, path, 2, 16, 1.0).unwrap();
        let b = WienerLattice::sample(seed, path, 2, 16, 1.0).unwrap();
        prop_assert_eq!(a.increments(), b.increments());
        let c = WienerLattice::sample(seed, path.wrapping_add(1), 2, 16, 1.0).unwrap();
        prop_assert_ne!(a.increments(), c.increments());
    }
}
