//! Time-stepping schemes.
//!
//! The GBM-based family multiplies an explicit drift update by the exact
//! linear flow `Φ(dt, dW)`:
//!
//! ```text
//! ei0:               Y' = Φ (Y + F(Y) dt)
//! tamed_ei0:         Y' = Φ (Y + F̃(Y) dt),       F̃ = F / (1 + dt |F|)
//! tamed_ei0_general: Y' = Φ (Y + (F̃ - Σ B_i g_i) dt + Σ g_i dW_i)
//! ```
//!
//! The baselines (tamed Euler–Maruyama, tamed/projected Milstein) and the
//! two adaptive schemes share the same lattice-driven loop so that every
//! scheme sees exactly the same Brownian path.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdeError};
use crate::sde_model::SemilinearSde;
use crate::wiener::WienerLattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    Ei0,
    TamedEi0,
    TamedEi0General,
    AdaptiveGbm,
    TamedEm,
    TamedMilstein,
    ProjectedMilstein,
    AdaptiveMilstein,
}

impl SchemeId {
    pub const ALL: [SchemeId; 8] = [
        SchemeId::Ei0,
        SchemeId::TamedEi0,
        SchemeId::TamedEi0General,
        SchemeId::AdaptiveGbm,
        SchemeId::TamedEm,
        SchemeId::TamedMilstein,
        SchemeId::ProjectedMilstein,
        SchemeId::AdaptiveMilstein,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::Ei0 => "ei0",
            SchemeId::TamedEi0 => "tamed_ei0",
            SchemeId::TamedEi0General => "tamed_ei0_general",
            SchemeId::AdaptiveGbm => "adaptive_gbm",
            SchemeId::TamedEm => "tamed_em",
            SchemeId::TamedMilstein => "tamed_milstein",
            SchemeId::ProjectedMilstein => "projected_milstein",
            SchemeId::AdaptiveMilstein => "adaptive_milstein",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, SchemeId::AdaptiveGbm | SchemeId::AdaptiveMilstein)
    }

    /// Checks that `model` has the structure the scheme relies on.
    pub fn check_compatible(self, model: &SemilinearSde) -> Result<()> {
        let needs_commuting = !matches!(self, SchemeId::TamedEm);
        if needs_commuting && !model.commutator().pass {
            return Err(SdeError::Config(format!(
                "scheme {self} requires commuting linear parts; {}",
                model.commutator()
            )));
        }
        match self {
            SchemeId::Ei0 | SchemeId::TamedEi0 | SchemeId::AdaptiveGbm if model.has_nonlinear_diffusion() => {
                Err(SdeError::Config(format!(
                    "scheme {self} handles linear diffusion only; model '{}' has nonlinear diffusion (use tamed_ei0_general)",
                    model.name()
                )))
            }
            SchemeId::TamedEi0General if !model.has_nonlinear_diffusion() => Err(SdeError::Config(format!(
                "scheme {self} needs nonlinear diffusion terms g_i; model '{}' has none",
                model.name()
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = SdeError;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| SdeError::Config(format!("unknown scheme '{s}'")))
    }
}

/// States produced by one integrator run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Fine-lattice node of each entry of `times`.
    pub lattice_index: Vec<usize>,
    /// Steps taken with the tamed backstop (adaptive schemes).
    pub backstop_count: usize,
    /// Steps where the raw step-size rule fell below `h_min` and was clamped.
    pub min_step_hits: usize,
    /// Steps started from a state outside the model's natural domain.
    pub domain_violations: usize,
}

impl Trajectory {
    fn start(model: &SemilinearSde, capacity: usize) -> Self {
        let mut times = Vec::with_capacity(capacity + 1);
        let mut states = Vec::with_capacity(capacity + 1);
        let mut lattice_index = Vec::with_capacity(capacity + 1);
        times.push(0.0);
        states.push(model.x0().clone());
        lattice_index.push(0);
        Trajectory {
            times,
            states,
            lattice_index,
            backstop_count: 0,
            min_step_hits: 0,
            domain_violations: 0,
        }
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory always holds x0")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory always holds t = 0")
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// `F / (1 + dt |F|)`.
pub fn tame(f: &DVector<f64>, dt: f64) -> DVector<f64> {
    f / (1.0 + dt * f.norm())
}

/// One step of `ei0` (`tamed = false`) or `tamed_ei0`.
pub fn step_tamed_ei0(
    model: &SemilinearSde,
    y: &DVector<f64>,
    t: f64,
    dt: f64,
    dw: &[f64],
    tamed: bool,
) -> DVector<f64> {
    let f = model.drift(y, t);
    let inner = if tamed { y + tame(&f, dt) * dt } else { y + f * dt };
    model.flow().apply(dt, dw, &inner)
}

pub fn step_tamed_ei0_general(
    model: &SemilinearSde,
    y: &DVector<f64>,
    t: f64,
    dt: f64,
    dw: &[f64],
) -> Result<DVector<f64>> {
    let g = model.nonlinear_diffusion(y, t).ok_or_else(|| {
        SdeError::Config(format!(
            "tamed_ei0_general needs nonlinear diffusion terms; model '{}' has none",
            model.name()
        ))
    })?;
    let mut inner = y + tame(&model.drift(y, t), dt) * dt;
    for (i, (bi, w)) in model.b().iter().zip(dw).enumerate() {
        let gi = g.column(i);
        inner -= bi * gi * dt;
        inner.axpy(*w, &gi, 1.0);
    }
    Ok(model.flow().apply(dt, dw, &inner))
}

fn add_diffusion(out: &mut DVector<f64>, sigma: &DMatrix<f64>, dw: &[f64]) {
    for (i, w) in dw.iter().enumerate() {
        out.axpy(*w, &sigma.column(i), 1.0);
    }
}

/// `Y + tame(AY + F, dt) dt + Σ σ_i(Y) dW_i`.
pub fn step_tamed_em(model: &SemilinearSde, y: &DVector<f64>, t: f64, dt: f64, dw: &[f64]) -> DVector<f64> {
    let mut out = y + tame(&model.full_drift(y, t), dt) * dt;
    add_diffusion(&mut out, &model.full_diffusion(y, t), dw);
    out
}

/// Plain explicit Euler–Maruyama on the full coefficients: no taming, no flow.
pub fn step_explicit_em(model: &SemilinearSde, y: &DVector<f64>, t: f64, dt: f64, dw: &[f64]) -> DVector<f64> {
    let mut out = y + model.full_drift(y, t) * dt;
    add_diffusion(&mut out, &model.full_diffusion(y, t), dw);
    out
}

/// `L^i σ_j = Dσ_j(Y) σ_i(Y)`; column `j` of the returned matrix.
fn diffusion_derivative_along(
    model: &SemilinearSde,
    y: &DVector<f64>,
    t: f64,
    direction: &DVector<f64>,
) -> DMatrix<f64> {
    let d = model.dim();
    let mut out = DMatrix::zeros(d, model.drivers());
    for (j, bj) in model.b().iter().enumerate() {
        out.set_column(j, &(bj * direction));
    }
    if let Some(g) = model.diffusion() {
        let nonlinear = match &g.derivative {
            Some(deriv) => deriv(y, t, direction),
            None => {
                let len = direction.norm();
                if len == 0.0 {
                    return out;
                }
                let h = 1e-6 * (1.0 + y.norm());
                let unit = direction / len;
                let plus = (g.columns)(&(y + &unit * h), t);
                let minus = (g.columns)(&(y - &unit * h), t);
                (plus - minus) * (len / (2.0 * h))
            }
        };
        out += nonlinear;
    }
    out
}

fn milstein_correction(model: &SemilinearSde, y: &DVector<f64>, t: f64, dt: f64, dw: &[f64], sigma: &DMatrix<f64>) -> DVector<f64> {
    let mut corr = DVector::zeros(model.dim());
    for i in 0..model.drivers() {
        let lsigma = diffusion_derivative_along(model, y, t, &sigma.column(i).into_owned());
        for (j, wj) in dw.iter().enumerate() {
            let weight = dw[i] * wj - if i == j { dt } else { 0.0 };
            if weight != 0.0 {
                corr.axpy(0.5 * weight, &lsigma.column(j), 1.0);
            }
        }
    }
    corr
}

/// Milstein step for commutative noise; `tamed` tames the full drift.
pub fn step_milstein(
    model: &SemilinearSde,
    y: &DVector<f64>,
    t: f64,
    dt: f64,
    dw: &[f64],
    tamed: bool,
) -> DVector<f64> {
    let drift = model.full_drift(y, t);
    let drift = if tamed { tame(&drift, dt) } else { drift };
    let sigma = model.full_diffusion(y, t);
    let mut out = y + drift * dt;
    add_diffusion(&mut out, &sigma, dw);
    out += milstein_correction(model, y, t, dt, dw, &sigma);
    out
}

pub fn step_tamed_milstein(model: &SemilinearSde, y: &DVector<f64>, t: f64, dt: f64, dw: &[f64]) -> DVector<f64> {
    step_milstein(model, y, t, dt, dw, true)
}

/// `κ · dt^{-1/(2c)}`.
pub fn projection_radius(kappa: f64, dt: f64, growth_exponent: f64) -> f64 {
    kappa * dt.powf(-1.0 / (2.0 * growth_exponent))
}

/// Radial projection onto the closed ball of radius `r`.
pub fn project_to_ball(y: &DVector<f64>, r: f64) -> DVector<f64> {
    let n = y.norm();
    if n > r {
        y * (r / n)
    } else {
        y.clone()
    }
}

pub fn step_projected_milstein(
    model: &SemilinearSde,
    y: &DVector<f64>,
    t: f64,
    dt: f64,
    dw: &[f64],
    kappa: f64,
) -> DVector<f64> {
    let r = projection_radius(kappa, dt, model.growth_exponent());
    step_milstein(model, &project_to_ball(y, r), t, dt, dw, false)
}

/// Step-size controller settings for the adaptive schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub h_max: f64,
    pub rho: f64,
    pub fine_delta: f64,
    max_units: usize,
    min_units: usize,
}

fn as_units(h: f64, delta: f64, what: &str) -> Result<usize> {
    let ratio = h / delta;
    let units = ratio.round();
    if units < 1.0 || (ratio - units).abs() > 1e-9 * ratio.max(1.0) {
        return Err(SdeError::Config(format!(
            "{what} = {h} must be a positive integer multiple of the lattice spacing {delta}"
        )));
    }
    Ok(units as usize)
}

impl AdaptiveConfig {
    pub fn new(h_max: f64, rho: f64, fine_delta: f64) -> Result<Self> {
        if !(h_max > 0.0) || !(fine_delta > 0.0) || !h_max.is_finite() {
            return Err(SdeError::Config(format!(
                "adaptive h_max ({h_max}) and lattice spacing ({fine_delta}) must be positive"
            )));
        }
        if !(rho >= 1.0) || !rho.is_finite() {
            return Err(SdeError::Config(format!("adaptive rho must be >= 1, got {rho}")));
        }
        let h_min = h_max / rho;
        if h_min < fine_delta * (1.0 - 1e-12) {
            return Err(SdeError::Config(format!(
                "adaptive h_min = h_max/rho = {h_min} is below the lattice spacing {fine_delta}"
            )));
        }
        let max_units = as_units(h_max, fine_delta, "adaptive h_max")?;
        let min_units = as_units(h_min, fine_delta, "adaptive h_min")?;
        Ok(AdaptiveConfig {
            h_max,
            rho,
            fine_delta,
            max_units,
            min_units,
        })
    }

    pub fn h_min(&self) -> f64 {
        self.min_units as f64 * self.fine_delta
    }

    pub fn check_horizon(&self, horizon: f64) -> Result<()> {
        if self.h_max > horizon * (1.0 + 1e-12) {
            return Err(SdeError::Config(format!(
                "adaptive h_max {} exceeds the horizon {horizon}",
                self.h_max
            )));
        }
        Ok(())
    }

    /// Step length in lattice units, whether it is the backstop step, and
    /// whether the raw rule fell below `h_min`.
    fn step_units(&self, y: &DVector<f64>) -> (usize, bool, bool) {
        let norm = y.norm();
        let raw = if norm > 0.0 { self.h_max / norm } else { f64::INFINITY };
        let raw_units = (raw / self.fine_delta + 1e-9).floor().min(self.max_units as f64);
        let clamped = raw < self.h_min() * (1.0 - 1e-12);
        let units = (raw_units as usize).max(self.min_units);
        (units, units == self.min_units, clamped)
    }
}

/// `h = max(h_min, min(h_max, h_max/|Y|))`, floored to the lattice.
pub fn adaptive_step_size(y: &DVector<f64>, cfg: &AdaptiveConfig) -> (f64, bool) {
    let (units, backstop, _) = cfg.step_units(y);
    (units as f64 * cfg.fine_delta, backstop)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeOptions {
    /// Projection radius scale for `projected_milstein`.
    pub kappa: f64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions { kappa: 1.0 }
    }
}

fn fixed_step(
    scheme: SchemeId,
    model: &SemilinearSde,
    y: &DVector<f64>,
    t: f64,
    dt: f64,
    dw: &[f64],
    opts: &SchemeOptions,
) -> Result<DVector<f64>> {
    Ok(match scheme {
        SchemeId::Ei0 => step_tamed_ei0(model, y, t, dt, dw, false),
        SchemeId::TamedEi0 => step_tamed_ei0(model, y, t, dt, dw, true),
        SchemeId::TamedEi0General => step_tamed_ei0_general(model, y, t, dt, dw)?,
        SchemeId::TamedEm => step_tamed_em(model, y, t, dt, dw),
        SchemeId::TamedMilstein => step_tamed_milstein(model, y, t, dt, dw),
        SchemeId::ProjectedMilstein => step_projected_milstein(model, y, t, dt, dw, opts.kappa),
        SchemeId::AdaptiveGbm | SchemeId::AdaptiveMilstein => {
            return Err(SdeError::Config(format!("{scheme} is adaptive; use integrate_adaptive")))
        }
    })
}

fn node_time(index: usize, lattice: &WienerLattice) -> f64 {
    if index == lattice.steps() {
        lattice.horizon()
    } else {
        index as f64 * lattice.delta()
    }
}

fn check_lattice(model: &SemilinearSde, lattice: &WienerLattice) -> Result<()> {
    if lattice.drivers() != model.drivers() {
        return Err(SdeError::dimension("lattice drivers", model.drivers(), lattice.drivers()));
    }
    let t = model.horizon();
    if (lattice.horizon() - t).abs() > 1e-12 * t {
        return Err(SdeError::Config(format!(
            "lattice horizon {} differs from model horizon {t}",
            lattice.horizon()
        )));
    }
    Ok(())
}

pub fn integrate_fixed(
    scheme: SchemeId,
    model: &SemilinearSde,
    lattice: &WienerLattice,
    factor: usize,
) -> Result<Trajectory> {
    integrate_fixed_with(scheme, model, lattice, factor, &SchemeOptions::default())
}

/// Runs a fixed-step scheme on the lattice coarsened by `factor`.
pub fn integrate_fixed_with(
    scheme: SchemeId,
    model: &SemilinearSde,
    lattice: &WienerLattice,
    factor: usize,
    opts: &SchemeOptions,
) -> Result<Trajectory> {
    if scheme.is_adaptive() {
        return Err(SdeError::Config(format!("{scheme} is adaptive; use integrate_adaptive")));
    }
    scheme.check_compatible(model)?;
    check_lattice(model, lattice)?;
    let coarse = lattice.coarsen(factor)?;
    let dt = lattice.horizon() / coarse.steps() as f64;

    let mut traj = Trajectory::start(model, coarse.steps());
    let mut y = model.x0().clone();
    for n in 0..coarse.steps() {
        let t = node_time(n * factor, lattice);
        if !model.in_domain(&y) {
            traj.domain_violations += 1;
        }
        y = fixed_step(scheme, model, &y, t, dt, coarse.step(n), opts)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::Overflow {
                scheme: scheme.to_string(),
                step: n,
            });
        }
        let idx = (n + 1) * factor;
        traj.times.push(node_time(idx, lattice));
        traj.lattice_index.push(idx);
        traj.states.push(y.clone());
    }
    Ok(traj)
}

/// Runs `adaptive_gbm` or `adaptive_milstein` with steps quantised to the
/// fine lattice. The final step is truncated to land on `T`.
pub fn integrate_adaptive(
    scheme: SchemeId,
    model: &SemilinearSde,
    lattice: &WienerLattice,
    cfg: &AdaptiveConfig,
) -> Result<Trajectory> {
    if !scheme.is_adaptive() {
        return Err(SdeError::Config(format!("{scheme} is not an adaptive scheme")));
    }
    scheme.check_compatible(model)?;
    check_lattice(model, lattice)?;
    if (cfg.fine_delta - lattice.delta()).abs() > 1e-12 * lattice.delta() {
        return Err(SdeError::Config(format!(
            "adaptive config spacing {} differs from lattice spacing {}",
            cfg.fine_delta,
            lattice.delta()
        )));
    }
    cfg.check_horizon(lattice.horizon())?;

    let total = lattice.steps();
    let mut traj = Trajectory::start(model, total / cfg.max_units + 1);
    let mut y = model.x0().clone();
    let mut idx = 0;
    let mut n = 0;
    while idx < total {
        let (units, backstop, clamped) = cfg.step_units(&y);
        let next = (idx + units).min(total);
        let h = node_time(next, lattice) - node_time(idx, lattice);
        let dw = lattice.increment_over(idx, next)?;
        let t = node_time(idx, lattice);
        if !model.in_domain(&y) {
            traj.domain_violations += 1;
        }
        traj.backstop_count += backstop as usize;
        traj.min_step_hits += clamped as usize;
        y = match scheme {
            SchemeId::AdaptiveGbm => step_tamed_ei0(model, &y, t, h, &dw, backstop),
            _ => step_milstein(model, &y, t, h, &dw, backstop),
        };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::Overflow {
                scheme: scheme.to_string(),
                step: n,
            });
        }
        idx = next;
        n += 1;
        traj.times.push(node_time(idx, lattice));
        traj.lattice_index.push(idx);
        traj.states.push(y.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_model::{builtin_model, default_params, NonlinearDiffusion};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn gl() -> SemilinearSde {
        builtin_model("ginzburg_landau", &default_params("ginzburg_landau").unwrap()).unwrap()
    }

    fn scalar(a: f64, b: f64) -> SemilinearSde {
        SemilinearSde::new(
            "scalar",
            DMatrix::from_element(1, 1, a),
            vec![DMatrix::from_element(1, 1, b)],
            Arc::new(|_, _| DVector::zeros(1)),
            dv(&[0.0]),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn tame_examples() {
        let t = tame(&dv(&[3.0, 4.0]), 0.1);
        assert_relative_eq!(t, dv(&[2.0, 8.0 / 3.0]), epsilon = 1e-15);
        assert_relative_eq!(t.norm(), 10.0 / 3.0, epsilon = 1e-14);
        assert_eq!(tame(&dv(&[0.0, 0.0]), 0.5), dv(&[0.0, 0.0]));
        let big = tame(&dv(&[1e6, 0.0]), 0.01);
        assert_relative_eq!(big.norm(), 1e6 / (1.0 + 1e4), epsilon = 1e-9);
        assert!(big.norm() <= 100.0);
    }

    #[test]
    fn tamed_ei0_ginzburg_landau_step() {
        // Φ = exp(-0.25 + √2·0.1); F̃ = -1/(1 + 0.25) = -0.8; Y' = Φ (1 - 0.8·0.25)
        let phi = (-0.25 + 2f64.sqrt() * 0.1).exp();
        let y = step_tamed_ei0(&gl(), &dv(&[1.0]), 0.0, 0.25, &[0.1], true);
        assert_relative_eq!(y[0], phi * 0.8, epsilon = 1e-15);
        assert_relative_eq!(y[0], 0.7176865, epsilon = 1e-6);
    }

    #[test]
    fn tamed_ei0_without_drift_is_flow() {
        let m = gl().linear_part();
        let y = step_tamed_ei0(&m, &dv(&[1.3]), 0.0, 0.1, &[-0.2], true);
        let phi = m.flow().flow(0.1, &[-0.2]).unwrap();
        assert_eq!(y, phi.apply(&dv(&[1.3])));
    }

    #[test]
    fn taming_perturbation_is_second_order() {
        let m = gl();
        let y0 = dv(&[0.3]);
        let dt = 0.01;
        let tamed = step_tamed_ei0(&m, &y0, 0.0, dt, &[0.05], true);
        let plain = step_tamed_ei0(&m, &y0, 0.0, dt, &[0.05], false);
        let f = m.drift(&y0, 0.0).norm();
        let phi = m.flow().flow(dt, &[0.05]).unwrap().to_dense()[(0, 0)];
        assert!((tamed - plain).norm() <= phi * dt * dt * f * f + 1e-17);
    }

    #[test]
    fn tamed_em_and_milstein_ginzburg_landau() {
        let m = gl();
        let em = step_tamed_em(&m, &dv(&[1.0]), 0.0, 0.25, &[0.1]);
        assert_relative_eq!(em[0], 0.8 + 2f64.sqrt() * 0.1, epsilon = 1e-15);
        assert_relative_eq!(em[0], 0.9414214, epsilon = 1e-7);
        let mil = step_tamed_milstein(&m, &dv(&[1.0]), 0.0, 0.25, &[0.1]);
        assert_relative_eq!(mil[0], 0.9414214 + 0.5 * 2.0 * (0.01 - 0.25), epsilon = 1e-7);
    }

    #[test]
    fn tamed_em_equilibrium_and_bound() {
        let m = gl();
        let y = step_tamed_em(&m, &dv(&[0.0]), 0.0, 0.1, &[0.0]);
        assert_eq!(y, dv(&[0.0]));
        let y = step_tamed_em(&m, &dv(&[1e3]), 0.0, 0.1, &[0.0]);
        assert!((y[0] - 1e3).abs() <= 1.0);
    }

    #[test]
    fn milstein_additive_noise_has_no_correction() {
        let m = scalar(0.0, 0.0).with_diffusion(NonlinearDiffusion {
            columns: Arc::new(|_, _| DMatrix::from_element(1, 1, 0.7)),
            derivative: None,
        });
        let em = step_tamed_em(&m, &dv(&[0.4]), 0.0, 0.1, &[0.3]);
        let mil = step_tamed_milstein(&m, &dv(&[0.4]), 0.0, 0.1, &[0.3]);
        assert_relative_eq!(em, mil, epsilon = 1e-15);
    }

    #[test]
    fn milstein_correction_vanishes_when_dw_squared_is_dt() {
        let m = gl();
        let dt: f64 = 0.04;
        let dw = dt.sqrt();
        let em = step_tamed_em(&m, &dv(&[0.6]), 0.0, dt, &[dw]);
        let mil = step_tamed_milstein(&m, &dv(&[0.6]), 0.0, dt, &[dw]);
        assert_relative_eq!(em, mil, epsilon = 1e-15);
    }

    #[test]
    fn milstein_finite_difference_matches_analytic() {
        // g(x) = sin(x): Dg·g = cos(x) sin(x)
        let fd = scalar(0.0, 0.0).with_diffusion(NonlinearDiffusion {
            columns: Arc::new(|x, _| DMatrix::from_element(1, 1, x[0].sin())),
            derivative: None,
        });
        let exact = scalar(0.0, 0.0).with_diffusion(NonlinearDiffusion {
            columns: Arc::new(|x, _| DMatrix::from_element(1, 1, x[0].sin())),
            derivative: Some(Arc::new(|x, _, v| DMatrix::from_element(1, 1, x[0].cos() * v[0]))),
        });
        let y = dv(&[0.9]);
        let a = step_tamed_milstein(&fd, &y, 0.0, 0.1, &[0.4]);
        let b = step_tamed_milstein(&exact, &y, 0.0, 0.1, &[0.4]);
        assert_relative_eq!(a, b, epsilon = 1e-9);
        let expect = 0.9 + 0.9f64.sin() * 0.4 + 0.5 * 0.9f64.cos() * 0.9f64.sin() * (0.16 - 0.1);
        assert_relative_eq!(b[0], expect, epsilon = 1e-14);
    }

    #[test]
    fn general_scheme_reductions() {
        let m = gl();
        let zero_g = m.clone().with_diffusion(NonlinearDiffusion {
            columns: Arc::new(|_, _| DMatrix::zeros(1, 1)),
            derivative: None,
        });
        let a = step_tamed_ei0_general(&zero_g, &dv(&[1.0]), 0.0, 0.25, &[0.1]).unwrap();
        let b = step_tamed_ei0(&m, &dv(&[1.0]), 0.0, 0.25, &[0.1], true);
        assert_eq!(a, b);

        let additive = scalar(0.0, 0.0).with_diffusion(NonlinearDiffusion {
            columns: Arc::new(|_, _| DMatrix::from_element(1, 1, 1.0)),
            derivative: None,
        });
        let y = step_tamed_ei0_general(&additive, &dv(&[0.0]), 0.0, 0.1, &[0.3]).unwrap();
        assert_relative_eq!(y[0], 0.3, epsilon = 1e-15);

        assert!(matches!(
            step_tamed_ei0_general(&m, &dv(&[1.0]), 0.0, 0.1, &[0.0]),
            Err(SdeError::Config(_))
        ));
    }

    #[test]
    fn general_with_zero_linear_parts_is_tamed_em() {
        let g = NonlinearDiffusion {
            columns: Arc::new(|x, _| DMatrix::from_element(1, 1, 0.5 * x[0].cos())),
            derivative: None,
        };
        let m = SemilinearSde::new(
            "em",
            DMatrix::zeros(1, 1),
            vec![DMatrix::zeros(1, 1)],
            Arc::new(|x, _| x.map(|v| -v * v * v)),
            dv(&[2.0]),
            1.0,
        )
        .unwrap()
        .with_diffusion(g);
        let y = dv(&[1.7]);
        assert_relative_eq!(
            step_tamed_ei0_general(&m, &y, 0.0, 0.1, &[0.2]).unwrap(),
            step_tamed_em(&m, &y, 0.0, 0.1, &[0.2]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn projection_examples() {
        let y = dv(&[6.0, 8.0]);
        let p = project_to_ball(&y, 2.0);
        assert_relative_eq!(p.norm(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(p, dv(&[1.2, 1.6]), epsilon = 1e-15);
        assert_relative_eq!(projection_radius(1.0, 0.01, 1.0), 10.0, epsilon = 1e-12);
        let m = gl();
        let small = dv(&[0.5]);
        assert_eq!(
            step_projected_milstein(&m, &small, 0.0, 0.01, &[0.1], 1.0),
            step_milstein(&m, &small, 0.0, 0.01, &[0.1], false)
        );
    }

    #[test]
    fn adaptive_step_examples() {
        let cfg = AdaptiveConfig::new(0.1, 10.0, 0.01).unwrap();
        let (h, b) = adaptive_step_size(&dv(&[0.5]), &cfg);
        assert_relative_eq!(h, 0.1, epsilon = 1e-15);
        assert!(!b);
        let (h, b) = adaptive_step_size(&dv(&[4.0]), &cfg);
        assert_relative_eq!(h, 0.02, epsilon = 1e-15);
        assert!(!b);
        let (h, b) = adaptive_step_size(&dv(&[100.0]), &cfg);
        assert_relative_eq!(h, 0.01, epsilon = 1e-15);
        assert!(b);
        let (h, b) = adaptive_step_size(&dv(&[0.0]), &cfg);
        assert_relative_eq!(h, 0.1, epsilon = 1e-15);
        assert!(!b);
    }

    #[test]
    fn adaptive_config_errors() {
        assert!(AdaptiveConfig::new(0.1, 20.0, 0.01).is_err());
        assert!(AdaptiveConfig::new(0.1, 0.5, 0.01).is_err());
        assert!(AdaptiveConfig::new(0.105, 1.0, 0.01).is_err());
        assert!(AdaptiveConfig::new(0.1, 3.0, 0.01).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for id in SchemeId::ALL {
            assert_eq!(id.as_str().parse::<SchemeId>().unwrap(), id);
        }
        assert!("rk4".parse::<SchemeId>().is_err());
    }

    #[test]
    fn fixed_single_step_and_determinism() {
        let m = gl();
        let lat = WienerLattice::sample(1, 0, 1, 16, 1.0).unwrap();
        let one = integrate_fixed(SchemeId::TamedEi0, &m, &lat, 16).unwrap();
        assert_eq!(one.steps(), 1);
        let direct = step_tamed_ei0(&m, m.x0(), 0.0, 1.0, &lat.increment_over(0, 16).unwrap(), true);
        assert_eq!(*one.final_state(), direct);
        let a = integrate_fixed(SchemeId::TamedMilstein, &m, &lat, 2).unwrap();
        let b = integrate_fixed(SchemeId::TamedMilstein, &m, &lat, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.final_time(), 1.0);
        assert_eq!(a.times.len(), 9);
    }

    #[test]
    fn overflow_is_reported_with_step() {
        let mut m = gl();
        m = m.with_initial_state(dv(&[1e200])).unwrap();
        let lat = WienerLattice::sample(1, 0, 1, 4, 1.0).unwrap();
        let err = integrate_fixed(SchemeId::Ei0, &m, &lat, 1).unwrap_err();
        assert!(matches!(err, SdeError::Overflow { step: 0, .. }), "{err}");
    }

    #[test]
    fn incompatible_scheme_rejected() {
        let m = gl().with_diffusion(NonlinearDiffusion {
            columns: Arc::new(|_, _| DMatrix::zeros(1, 1)),
            derivative: None,
        });
        let lat = WienerLattice::sample(1, 0, 1, 4, 1.0).unwrap();
        assert!(integrate_fixed(SchemeId::TamedEi0, &m, &lat, 1).is_err());
        assert!(integrate_fixed(SchemeId::TamedEi0General, &gl(), &lat, 1).is_err());
        assert!(integrate_fixed(SchemeId::AdaptiveGbm, &gl(), &lat, 1).is_err());
        let cfg = AdaptiveConfig::new(0.25, 1.0, 0.25).unwrap();
        assert!(integrate_adaptive(SchemeId::TamedEi0, &gl(), &lat, &cfg).is_err());
    }
}
