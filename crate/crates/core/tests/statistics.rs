use gbmsde::harness::{efficiency_run, moment_bound_check, regularity_check, stress_divergence, ExperimentSpec};
use gbmsde::sde_model::default_params;
use gbmsde::{builtin_model, DMatrix, DVector, ReferenceKind, SchemeId, SdeError, WienerLattice};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn increments_have_variance_delta() {
    let steps = 256;
    let lat = WienerLattice::sample(7, 0, 1, steps * 400, 400.0).unwrap();
    let (mean, var) = mean_var(lat.increments());
    let n = lat.increments().len() as f64;
    let delta = lat.delta();
    assert!(mean.abs() < 4.0 * (delta / n).sqrt(), "mean {mean}");
    // Var of sample variance for Gaussians: 2σ⁴/(n-1)
    assert!((var - delta).abs() < 4.0 * delta * (2.0 / n).sqrt(), "var {var} vs {delta}");
}

#[test]
fn drivers_are_uncorrelated() {
    let lat = WienerLattice::sample(11, 3, 2, 100_000, 1.0).unwrap();
    let x: Vec<f64> = (0..lat.steps()).map(|n| lat.step(n)[0]).collect();
    let y: Vec<f64> = (0..lat.steps()).map(|n| lat.step(n)[1]).collect();
    let (mx, vx) = mean_var(&x);
    let (my, vy) = mean_var(&y);
    let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0);
    let rho = cov / (vx * vy).sqrt();
    assert!(rho.abs() < 4.0 / (x.len() as f64).sqrt(), "correlation {rho}");
}

#[test]
fn terminal_value_across_paths() {
    let paths = 4000;
    let wt: Vec<f64> = (0..paths)
        .map(|p| *WienerLattice::sample(5, p, 1, 64, 2.0).unwrap().path(0).last().unwrap())
        .collect();
    let (mean, var) = mean_var(&wt);
    let n = paths as f64;
    assert!(mean.abs() < 4.0 * (2.0 / n).sqrt(), "mean {mean}");
    assert!((var - 2.0).abs() < 4.0 * 2.0 * (2.0 / n).sqrt(), "var {var}");
}

#[test]
fn moment_examples() {
    for p in [2.0, 4.0] {
        let r = moment_bound_check(0.0, 1.0, p, 0.5, 100_000, 3).unwrap();
        assert!(r.pass, "{r:?}");
    }
    let r = moment_bound_check(-1.0, 0.5, 2.0, 0.25, 50_000, 4).unwrap();
    assert!((r.exact - (2.0f64 * -0.25 + 0.25 * 0.25).exp()).abs() < 1e-15);
    assert!(r.pass, "{r:?}");
}

#[test]
fn regularity_examples() {
    let dts: Vec<f64> = (6..=12).map(|k| 2f64.powi(-k)).collect();
    let v = DVector::from_element(1, 1.0);
    let drift_only = regularity_check(&DMatrix::from_element(1, 1, -1.0), &[DMatrix::zeros(1, 1)], &v, &dts, 100, 1)
        .unwrap();
    assert!((drift_only.exponent - 1.0).abs() < 0.02, "{}", drift_only.exponent);
    let noise = regularity_check(&DMatrix::zeros(1, 1), &[DMatrix::identity(1, 1)], &v, &dts, 20_000, 1).unwrap();
    assert!((noise.exponent - 0.5).abs() < 0.05, "{}", noise.exponent);
    let zero = DVector::zeros(1);
    let err = regularity_check(&DMatrix::zeros(1, 1), &[DMatrix::identity(1, 1)], &zero, &dts, 10, 1).unwrap_err();
    assert!(matches!(err, SdeError::Degenerate(_)));
}

#[test]
fn small_step_euler_is_stable() {
    let r = stress_divergence(2f64.powi(-10), 200, 0.5, 9, None).unwrap();
    assert_eq!(r.em_blowups, 0);
    assert!(r.tamed_max_norm < 50.0);
}

#[test]
fn efficiency_time_scales_with_paths() {
    let model = builtin_model("hiv", &default_params("hiv").unwrap()).unwrap();
    let mut spec = ExperimentSpec::new(
        model,
        vec![SchemeId::TamedEi0],
        ReferenceKind::FineScheme(SchemeId::TamedMilstein),
    );
    spec.fine_steps = 1 << 12;
    spec.factors = vec![4];
    spec.groups = 10;
    spec.workers = Some(1);
    let time = |paths: usize, spec: &mut ExperimentSpec| {
        spec.paths = paths;
        // best of three to damp scheduler noise
        (0..3)
            .map(|_| efficiency_run(spec).unwrap()[0].rows[0].cpu_seconds)
            .fold(f64::INFINITY, f64::min)
    };
    let t1 = time(100, &mut spec);
    let t2 = time(200, &mut spec);
    assert!(t1 > 0.0);
    let ratio = t2 / t1;
    assert!((1.0..=3.0).contains(&ratio), "ratio {ratio}");
}
