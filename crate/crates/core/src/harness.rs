//! Strong-convergence experiments and statistical checks.
//!
//! Every path `p` regenerates its own lattice from `(master_seed, p)`, so
//! paths can be farmed out to any number of workers. Per-path results are
//! collected in path order and reduced sequentially, which keeps reports
//! bit-identical across worker counts.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Result, SdeError};
use crate::gbm_flow::LinearFlow;
use crate::integrators::{
    integrate_adaptive, integrate_fixed, integrate_fixed_with, step_explicit_em, AdaptiveConfig, SchemeId,
    SchemeOptions, Trajectory,
};
use crate::sde_model::{builtin_model, ExactSolution, ModelParams, SemilinearSde};
use crate::wiener::{path_rng, WienerLattice};

/// Where reference solutions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// The model's closed-form solution, evaluated on the fine lattice.
    Analytic,
    /// A fixed-step scheme run on the full fine lattice.
    FineScheme(SchemeId),
}

impl fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceKind::Analytic => f.write_str("analytic"),
            ReferenceKind::FineScheme(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for ReferenceKind {
    type Err = SdeError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "analytic" {
            Ok(ReferenceKind::Analytic)
        } else {
            s.parse().map(ReferenceKind::FineScheme)
        }
    }
}

/// Where the pathwise error is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorNorm {
    /// `|Y_N - X_T|`.
    #[default]
    Endpoint,
    /// `max_n |Y_n - X(t_n)|` over the scheme's own grid.
    SupGrid,
}

impl FromStr for ErrorNorm {
    type Err = SdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "endpoint" => Ok(ErrorNorm::Endpoint),
            "sup_grid" => Ok(ErrorNorm::SupGrid),
            other => Err(SdeError::Config(format!("unknown error norm '{other}' (endpoint|sup_grid)"))),
        }
    }
}

impl fmt::Display for ErrorNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorNorm::Endpoint => "endpoint",
            ErrorNorm::SupGrid => "sup_grid",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub model: SemilinearSde,
    pub schemes: Vec<SchemeId>,
    /// Coarsening factors of the fine lattice; for adaptive schemes the
    /// factor sets `h_max`.
    pub factors: Vec<usize>,
    pub paths: usize,
    pub groups: usize,
    pub master_seed: u64,
    pub fine_steps: usize,
    pub reference: ReferenceKind,
    pub error_at: ErrorNorm,
    pub adaptive_rho: f64,
    pub kappa: f64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Record wall-clock time per (scheme, dt).
    pub timing: bool,
}

impl ExperimentSpec {
    pub fn new(model: SemilinearSde, schemes: Vec<SchemeId>, reference: ReferenceKind) -> Self {
        ExperimentSpec {
            model,
            schemes,
            factors: (5..=10).rev().map(|k| 1usize << k).collect(),
            paths: 500,
            groups: 20,
            master_seed: 42,
            fine_steps: 1 << 14,
            reference,
            error_at: ErrorNorm::Endpoint,
            adaptive_rho: 32.0,
            kappa: 1.0,
            workers: None,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(SdeError::Config("run.schemes is empty".into()));
        }
        if self.paths == 0 {
            return Err(SdeError::Config("run.M must be positive".into()));
        }
        if self.groups == 0 || !self.paths.is_multiple_of(self.groups) {
            return Err(SdeError::Config(format!(
                "run.groups = {} must divide run.M = {}",
                self.groups, self.paths
            )));
        }
        if self.fine_steps == 0 {
            return Err(SdeError::Config("run.N_fine must be positive".into()));
        }
        if self.factors.is_empty() {
            return Err(SdeError::Config("run.dt_factors is empty".into()));
        }
        for &f in &self.factors {
            if f == 0 || !self.fine_steps.is_multiple_of(f) {
                return Err(SdeError::Config(format!(
                    "run.dt_factors entry {f} does not divide run.N_fine = {}",
                    self.fine_steps
                )));
            }
        }
        if self.workers == Some(0) {
            return Err(SdeError::Config("worker count must be positive".into()));
        }
        match self.reference {
            ReferenceKind::Analytic if self.model.exact().is_none() => {
                return Err(SdeError::Config(format!(
                    "run.reference = analytic but model '{}' has no closed-form solution",
                    self.model.name()
                )))
            }
            ReferenceKind::FineScheme(s) if s.is_adaptive() => {
                return Err(SdeError::Config("run.reference must be a fixed-step scheme".into()))
            }
            ReferenceKind::FineScheme(s) => s.check_compatible(&self.model)?,
            ReferenceKind::Analytic => {}
        }
        let delta = self.model.horizon() / self.fine_steps as f64;
        for &scheme in &self.schemes {
            scheme.check_compatible(&self.model)?;
            if scheme.is_adaptive() {
                for &f in &self.factors {
                    AdaptiveConfig::new(f as f64 * delta, self.adaptive_rho, delta)?;
                }
            }
        }
        Ok(())
    }
}

/// One `(dt, RMSE)` measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dt: f64,
    pub rmse: f64,
    pub group_std_err: f64,
    pub cpu_seconds: f64,
    pub aborted_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub scheme: SchemeId,
    pub model: String,
    pub rows: Vec<ReportRow>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub paths: usize,
    pub groups: usize,
    pub master_seed: u64,
}

/// Closed-form Ginzburg–Landau solution at every fine node:
///
/// ```text
/// X_t = x0 e^{-t + √σ W_t} / sqrt(1 + 2 x0² ∫_0^t e^{-2s + 2√σ W_s} ds)
/// ```
///
/// with the pathwise integral accumulated by the trapezoid rule.
pub fn gl_exact_path(lattice: &WienerLattice, sigma: f64, x0: f64) -> Vec<f64> {
    let w = lattice.path(0);
    let delta = lattice.delta();
    let root = sigma.sqrt();
    let n = lattice.steps();
    let time = |k: usize| if k == n { lattice.horizon() } else { k as f64 * delta };
    let integrand = |k: usize| (-2.0 * time(k) + 2.0 * root * w[k]).exp();

    let mut out = Vec::with_capacity(n + 1);
    let mut integral = 0.0;
    let mut prev = integrand(0);
    out.push(x0);
    for k in 1..=n {
        let cur = integrand(k);
        integral += 0.5 * (time(k) - time(k - 1)) * (prev + cur);
        prev = cur;
        out.push(x0 * (-time(k) + root * w[k]).exp() / (1.0 + 2.0 * x0 * x0 * integral).sqrt());
    }
    out
}

pub fn gl_exact_solution(lattice: &WienerLattice, sigma: f64, x0: f64) -> Result<f64> {
    if lattice.drivers() != 1 {
        return Err(SdeError::dimension("Ginzburg-Landau lattice drivers", 1, lattice.drivers()));
    }
    if !(sigma > 0.0) {
        return Err(SdeError::InvalidParameter {
            param: "sigma".into(),
            reason: format!("must be positive, got {sigma}"),
        });
    }
    let x = *gl_exact_path(lattice, sigma, x0).last().expect("path includes T");
    if x.is_finite() {
        Ok(x)
    } else {
        Err(SdeError::NonFinite("Ginzburg-Landau exact solution"))
    }
}

/// Reference states at every fine node, or `None` if the reference overflowed.
fn reference_path(spec: &ExperimentSpec, lattice: &WienerLattice) -> Option<Vec<DVector<f64>>> {
    match spec.reference {
        ReferenceKind::Analytic => match spec.model.exact()? {
            ExactSolution::GinzburgLandau { sigma } => {
                let path = gl_exact_path(lattice, sigma, spec.model.x0()[0]);
                path.iter().all(|x| x.is_finite()).then(|| {
                    path.into_iter().map(|x| DVector::from_element(1, x)).collect()
                })
            }
        },
        ReferenceKind::FineScheme(scheme) => {
            let opts = SchemeOptions { kappa: spec.kappa };
            integrate_fixed_with(scheme, &spec.model, lattice, 1, &opts)
                .ok()
                .map(|t| t.states)
        }
    }
}

fn run_scheme(spec: &ExperimentSpec, scheme: SchemeId, lattice: &WienerLattice, factor: usize) -> Result<Trajectory> {
    if scheme.is_adaptive() {
        let cfg = AdaptiveConfig::new(factor as f64 * lattice.delta(), spec.adaptive_rho, lattice.delta())?;
        integrate_adaptive(scheme, &spec.model, lattice, &cfg)
    } else {
        let opts = SchemeOptions { kappa: spec.kappa };
        integrate_fixed_with(scheme, &spec.model, lattice, factor, &opts)
    }
}

fn squared_error(traj: &Trajectory, reference: &[DVector<f64>], norm: ErrorNorm) -> f64 {
    match norm {
        ErrorNorm::Endpoint => (traj.final_state() - &reference[reference.len() - 1]).norm_squared(),
        ErrorNorm::SupGrid => traj
            .states
            .iter()
            .zip(&traj.lattice_index)
            .map(|(y, &k)| (y - &reference[k]).norm_squared())
            .fold(0.0, f64::max),
    }
}

struct PathOutcome {
    // [scheme][factor]: squared error, or None when aborted.
    errors: Vec<Vec<Option<f64>>>,
    seconds: Vec<Vec<f64>>,
}

fn run_path(spec: &ExperimentSpec, factors: &[usize], path: usize) -> Result<PathOutcome> {
    let model = &spec.model;
    let lattice = WienerLattice::sample(spec.master_seed, path as u64, model.drivers(), spec.fine_steps, model.horizon())?;
    let reference = reference_path(spec, &lattice);
    let mut errors = Vec::with_capacity(spec.schemes.len());
    let mut seconds = Vec::with_capacity(spec.schemes.len());
    for &scheme in &spec.schemes {
        let mut errs = Vec::with_capacity(factors.len());
        let mut secs = Vec::with_capacity(factors.len());
        for &factor in factors {
            let start = spec.timing.then(Instant::now);
            let result = run_scheme(spec, scheme, &lattice, factor);
            secs.push(start.map_or(0.0, |s| s.elapsed().as_secs_f64()));
            let err = match result {
                Ok(traj) => reference.as_ref().map(|r| squared_error(&traj, r, spec.error_at)),
                Err(SdeError::Overflow { .. }) => None,
                Err(e) => return Err(e),
            };
            errs.push(err.filter(|e| e.is_finite()));
        }
        errors.push(errs);
        seconds.push(secs);
    }
    Ok(PathOutcome { errors, seconds })
}

/// Neumaier-compensated sum in iteration order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn rmse_of(errors: &[Option<f64>]) -> (f64, usize) {
    let valid: Vec<f64> = errors.iter().flatten().copied().collect();
    if valid.is_empty() {
        return (f64::NAN, 0);
    }
    ((compensated_sum(valid.iter().copied()) / valid.len() as f64).sqrt(), valid.len())
}

fn in_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SdeError::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Coupled RMSE of every scheme against the reference, one report per scheme.
pub fn run_convergence(spec: &ExperimentSpec) -> Result<Vec<ConvergenceReport>> {
    spec.validate()?;
    let mut factors = spec.factors.clone();
    factors.sort_unstable_by(|a, b| b.cmp(a));
    factors.dedup();

    let outcomes = in_pool(spec.workers, || {
        (0..spec.paths)
            .into_par_iter()
            .map(|p| run_path(spec, &factors, p))
            .collect::<Result<Vec<_>>>()
    })??;

    let delta = spec.model.horizon() / spec.fine_steps as f64;
    let group_len = spec.paths / spec.groups;
    let mut reports = Vec::with_capacity(spec.schemes.len());
    for (s, &scheme) in spec.schemes.iter().enumerate() {
        let mut rows = Vec::with_capacity(factors.len());
        for (f, &factor) in factors.iter().enumerate() {
            let errors: Vec<Option<f64>> = outcomes.iter().map(|o| o.errors[s][f]).collect();
            let (rmse, valid) = rmse_of(&errors);
            let group_rmse: Vec<f64> = errors
                .chunks(group_len)
                .map(|c| rmse_of(c).0)
                .filter(|r| r.is_finite())
                .collect();
            let group_std_err = if group_rmse.len() > 1 {
                let n = group_rmse.len() as f64;
                let mean = compensated_sum(group_rmse.iter().copied()) / n;
                let var = compensated_sum(group_rmse.iter().map(|r| (r - mean).powi(2))) / (n - 1.0);
                (var / n).sqrt()
            } else {
                f64::NAN
            };
            rows.push(ReportRow {
                dt: factor as f64 * delta,
                rmse,
                group_std_err,
                cpu_seconds: compensated_sum(outcomes.iter().map(|o| o.seconds[s][f])),
                aborted_paths: spec.paths - valid,
            });
        }
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.rmse.is_finite() && r.rmse > 0.0)
            .map(|r| (r.dt, r.rmse))
            .collect();
        let (slope, slope_stderr) = fit_slope(&points).unwrap_or((f64::NAN, f64::NAN));
        reports.push(ConvergenceReport {
            scheme,
            model: spec.model.name().to_string(),
            rows,
            slope,
            slope_stderr,
            paths: spec.paths,
            groups: spec.groups,
            master_seed: spec.master_seed,
        });
    }
    Ok(reports)
}

/// Same engine as [`run_convergence`] with wall-clock timing switched on.
/// `cpu_seconds` is the total time spent integrating all paths at that
/// (scheme, dt).
pub fn efficiency_run(spec: &ExperimentSpec) -> Result<Vec<ConvergenceReport>> {
    let mut spec = spec.clone();
    spec.timing = true;
    run_convergence(&spec)
}

/// Least-squares slope of `log(rmse)` against `log(dt)` and its standard error.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(SdeError::Degenerate(format!("slope fit needs at least 2 points, got {}", points.len())));
    }
    if let Some((x, y)) = points.iter().find(|(x, y)| !(*x > 0.0) || !(*y > 0.0)) {
        return Err(SdeError::Degenerate(format!("slope fit needs positive values, got ({x}, {y})")));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(SdeError::Degenerate("slope fit needs at least two distinct step sizes".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let stderr = if points.len() > 2 {
        let intercept = my - slope * mx;
        let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((slope, stderr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub empirical: f64,
    pub std_err: f64,
    pub exact: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Monte Carlo `E|Φ|^p` for the scalar flow `Φ = exp((a - b²/2) dt + b dW)`
/// against its exact value `exp(p a dt + p(p-1) b² dt / 2)` and the bound
/// `exp(p (|a| + (p-1) b² / 2) dt)`.
pub fn moment_bound_check(a: f64, b: f64, p: f64, dt: f64, samples: usize, seed: u64) -> Result<MomentReport> {
    if samples < 2 {
        return Err(SdeError::Config("moment check needs at least 2 samples".into()));
    }
    let flow = LinearFlow::new(&DMatrix::from_element(1, 1, a), &[DMatrix::from_element(1, 1, b)])?;
    let mut rng = path_rng(seed, 0);
    let sd = dt.sqrt();
    let values: Vec<f64> = (0..samples)
        .map(|_| {
            let dw = sd * rng.sample::<f64, _>(StandardNormal);
            let phi = flow.apply(dt, &[dw], &DVector::from_element(1, 1.0))[0];
            phi.abs().powf(p)
        })
        .collect();
    let n = samples as f64;
    let empirical = compensated_sum(values.iter().copied()) / n;
    let var = compensated_sum(values.iter().map(|v| (v - empirical).powi(2))) / (n - 1.0);
    let std_err = (var / n).sqrt();
    let exact = (p * a * dt + p * (p - 1.0) * b * b * dt / 2.0).exp();
    let bound = (p * (a.abs() + (p - 1.0) / 2.0 * b * b) * dt).exp();
    let roundoff = 1e-12 * exact;
    let pass = (empirical - exact).abs() <= 4.0 * std_err + roundoff
        && empirical <= bound * (1.0 + 4.0 * std_err / empirical) + roundoff;
    Ok(MomentReport {
        empirical,
        std_err,
        exact,
        bound,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub exponent: f64,
    pub stderr: f64,
    /// `(dt, sqrt(E|Φv - v|²))` per ladder entry.
    pub points: Vec<(f64, f64)>,
}

/// Fits the exponent of `‖Φ(dt) v - v‖_{L²}` against `dt`.
pub fn regularity_check(
    a: &DMatrix<f64>,
    b: &[DMatrix<f64>],
    v: &DVector<f64>,
    dts: &[f64],
    samples: usize,
    seed: u64,
) -> Result<RegularityReport> {
    if v.norm() == 0.0 {
        return Err(SdeError::Degenerate("regularity check with v = 0".into()));
    }
    if v.len() != a.nrows() {
        return Err(SdeError::dimension("v", a.nrows(), v.len()));
    }
    let flow = LinearFlow::new(a, b)?;
    let m = flow.drivers();
    let points = dts
        .iter()
        .enumerate()
        .map(|(k, &dt)| {
            let mut rng = path_rng(seed, k as u64);
            let sd = dt.sqrt();
            let mut dw = vec![0.0; m];
            let sq = (0..samples).map(|_| {
                for w in dw.iter_mut() {
                    *w = sd * rng.sample::<f64, _>(StandardNormal);
                }
                (flow.apply(dt, &dw, v) - v).norm_squared()
            });
            (dt, (compensated_sum(sq) / samples as f64).sqrt())
        })
        .collect::<Vec<_>>();
    let (exponent, stderr) = fit_slope(&points)?;
    Ok(RegularityReport { exponent, stderr, points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressReport {
    pub em_blowup_fraction: f64,
    pub em_blowups: usize,
    pub tamed_max_norm: f64,
    pub paths: usize,
    pub dt: f64,
    pub x0: f64,
}

pub const BLOWUP_THRESHOLD: f64 = 1e6;

/// Explicit Euler–Maruyama against `tamed_ei0` on Ginzburg–Landau (σ = 2,
/// T = 1) with shared lattices of spacing `dt`.
pub fn stress_divergence(dt: f64, paths: usize, x0: f64, seed: u64, workers: Option<usize>) -> Result<StressReport> {
    let steps = (1.0 / dt).round();
    if !(dt > 0.0) || steps < 1.0 || (steps * dt - 1.0).abs() > 1e-12 {
        return Err(SdeError::Config(format!("stress dt = {dt} must divide T = 1")));
    }
    if paths == 0 {
        return Err(SdeError::Config("stress needs at least one path".into()));
    }
    let steps = steps as usize;
    let model = builtin_model("ginzburg_landau", &ModelParams::from([("sigma".to_string(), 2.0)]))?
        .with_initial_state(DVector::from_element(1, x0))?;

    let outcomes = in_pool(workers, || {
        (0..paths)
            .into_par_iter()
            .map(|p| -> Result<(bool, f64)> {
                let lattice = WienerLattice::sample(seed, p as u64, 1, steps, 1.0)?;
                let mut y = model.x0().clone();
                let mut blowup = false;
                for n in 0..steps {
                    y = step_explicit_em(&model, &y, n as f64 * dt, dt, lattice.step(n));
                    if !(y.norm() <= BLOWUP_THRESHOLD) {
                        blowup = true;
                        break;
                    }
                }
                let tamed = integrate_fixed(SchemeId::TamedEi0, &model, &lattice, 1)?;
                let max_norm = tamed.states.iter().map(|s| s.norm()).fold(0.0, f64::max);
                Ok((blowup, max_norm))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let em_blowups = outcomes.iter().filter(|o| o.0).count();
    Ok(StressReport {
        em_blowup_fraction: em_blowups as f64 / paths as f64,
        em_blowups,
        tamed_max_norm: outcomes.iter().map(|o| o.1).fold(0.0, f64::max),
        paths,
        dt,
        x0,
    })
}
