use gbmsde::harness::{gl_exact_solution, run_convergence, ExperimentSpec};
use gbmsde::integrators::{integrate_adaptive, integrate_fixed, integrate_fixed_with, SchemeOptions};
use gbmsde::sde_model::default_params;
use gbmsde::{
    build_spde_model, builtin_model, AdaptiveConfig, DVector, ReferenceKind, SchemeId, SemilinearSde, SpdeConfig,
    WienerLattice,
};

fn model(name: &str) -> SemilinearSde {
    builtin_model(name, &default_params(name).unwrap()).unwrap()
}

#[test]
fn adaptive_with_small_state_is_untamed() {
    // x0 small and σ small enough that ‖Y‖ stays below 1: h = h_max throughout
    let mut p = default_params("ginzburg_landau").unwrap();
    p.insert("sigma".into(), 0.01);
    let m = builtin_model("ginzburg_landau", &p)
        .unwrap()
        .with_initial_state(DVector::from_element(1, 0.5))
        .unwrap();
    let lattice = WienerLattice::sample(1, 0, 1, 1 << 10, 1.0).unwrap();
    let cfg = AdaptiveConfig::new(1.0 / 16.0, 32.0, lattice.delta()).unwrap();
    let a = integrate_adaptive(SchemeId::AdaptiveGbm, &m, &lattice, &cfg).unwrap();
    let f = integrate_fixed(SchemeId::Ei0, &m, &lattice, 64).unwrap();
    assert_eq!(a.backstop_count, 0);
    assert_eq!(a.times, f.times);
    for (x, y) in a.states.iter().zip(&f.states) {
        assert!((x - y).amax() <= 1e-14);
    }
}

#[test]
fn adaptive_steps_land_on_horizon() {
    let m = model("lotka_volterra");
    let lattice = WienerLattice::sample(2, 0, m.drivers(), 1 << 12, 1.0).unwrap();
    let cfg = AdaptiveConfig::new(1.0 / 16.0, 32.0, lattice.delta()).unwrap();
    for scheme in [SchemeId::AdaptiveGbm, SchemeId::AdaptiveMilstein] {
        let t = integrate_adaptive(scheme, &m, &lattice, &cfg).unwrap();
        assert_eq!(t.final_time(), 1.0);
        assert!(t.times.windows(2).all(|w| w[1] > w[0]));
        assert!(t.lattice_index.windows(2).all(|w| w[1] - w[0] <= 256));
    }
}

#[test]
fn fixed_schemes_agree_on_fine_grid() {
    // all first-order schemes approach the same path as dt shrinks
    let m = model("hiv");
    let lattice = WienerLattice::sample(3, 1, m.drivers(), 1 << 14, 1.0).unwrap();
    let reference = integrate_fixed(SchemeId::TamedMilstein, &m, &lattice, 1).unwrap();
    let opts = SchemeOptions { kappa: 1.0 };
    for scheme in [SchemeId::TamedEi0, SchemeId::TamedMilstein, SchemeId::ProjectedMilstein, SchemeId::TamedEm] {
        let t = integrate_fixed_with(scheme, &m, &lattice, 4, &opts).unwrap();
        let err = (t.final_state() - reference.final_state()).norm();
        // tamed EM has strong order 1/2 under multiplicative noise
        let tol = if scheme == SchemeId::TamedEm { 3e-2 } else { 5e-3 };
        assert!(err < tol, "{scheme}: {err}");
    }
}

#[test]
fn tamed_ei0_tracks_exact_gl_solution() {
    let m = model("ginzburg_landau");
    let lattice = WienerLattice::sample(4, 0, 1, 1 << 14, 1.0).unwrap();
    let exact = gl_exact_solution(&lattice, 2.0, 1.0).unwrap();
    let coarse = integrate_fixed(SchemeId::TamedEi0, &m, &lattice, 512).unwrap();
    let fine = integrate_fixed(SchemeId::TamedEi0, &m, &lattice, 4).unwrap();
    let e_coarse = (coarse.final_state()[0] - exact).abs();
    let e_fine = (fine.final_state()[0] - exact).abs();
    assert!(e_fine < e_coarse.max(1e-4), "{e_fine} vs {e_coarse}");
    assert!(e_fine < 1e-3);
}

#[test]
fn milstein_convergence() {
    let mut spec = ExperimentSpec::new(
        model("lotka_volterra"),
        vec![SchemeId::TamedMilstein],
        ReferenceKind::FineScheme(SchemeId::TamedMilstein),
    );
    spec.paths = 100;
    spec.fine_steps = 1 << 13;
    spec.factors = vec![512, 256, 128, 64, 32];
    let mut reports = run_convergence(&spec).unwrap();

    // adaptive steps shrink with ‖Y‖, so check them against the analytic GL solution
    let mut spec = ExperimentSpec::new(
        model("ginzburg_landau"),
        vec![SchemeId::AdaptiveMilstein],
        ReferenceKind::Analytic,
    );
    spec.paths = 100;
    spec.factors = vec![512, 256, 128, 64, 32];
    reports.extend(run_convergence(&spec).unwrap());
    for r in &reports {
        assert!(r.slope > 0.7 && r.slope < 1.4, "{}: {}", r.scheme, r.slope);
        assert!(r.rows.windows(2).all(|w| w[0].dt > w[1].dt));
        assert!(r.rows.iter().all(|row| row.aborted_paths == 0));
    }
}

#[test]
fn spde_schemes_match_compatibility() {
    let cfg = SpdeConfig::new(8, 0.1, 1.0, 0.0, 1.0, 1.0);
    let linear_noise = build_spde_model(&cfg).unwrap();
    assert!(SchemeId::TamedEi0.check_compatible(&linear_noise).is_ok());
    let cfg = SpdeConfig::new(8, 0.1, 1.0, 1.0, 0.1, 1.0);
    let general = build_spde_model(&cfg).unwrap();
    assert!(SchemeId::TamedEi0.check_compatible(&general).is_err());
    assert!(SchemeId::TamedEi0General.check_compatible(&general).is_ok());
    let lattice = WienerLattice::sample(1, 0, general.drivers(), 256, 1.0).unwrap();
    let t = integrate_fixed(SchemeId::TamedEi0General, &general, &lattice, 8).unwrap();
    assert!(t.final_state().iter().all(|v| v.is_finite()));
}
