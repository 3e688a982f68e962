//! Semilinear SDE problem type and the built-in benchmark models.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdeError};
use crate::gbm_flow::LinearFlow;

/// Nonlinear drift `F(x, t)`. Autonomous models ignore `t`.
pub type DriftFn = Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
/// Jacobian `DF(x, t)`.
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;
/// All nonlinear diffusion columns at once: a `d × m` matrix whose column
/// `i` is `g_i(x, t)`.
pub type DiffusionFn = Arc<dyn Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;
/// Directional derivative of the diffusion columns: column `i` is
/// `Dg_i(x, t) v`.
pub type DiffusionDerivFn =
    Arc<dyn Fn(&DVector<f64>, f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Predicate that is false when a state leaves the model's natural domain.
pub type DomainFn = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// Named real parameters for [`builtin_model`].
pub type ModelParams = BTreeMap<String, f64>;

#[derive(Clone)]
pub struct NonlinearDiffusion {
    pub columns: DiffusionFn,
    pub derivative: Option<DiffusionDerivFn>,
}

/// Closed-form solutions known to the harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactSolution {
    GinzburgLandau { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommutativityReport {
    pub max_ab_commutator: f64,
    pub max_bb_commutator: f64,
    pub pass: bool,
    pub tolerance: f64,
}

impl fmt::Display for CommutativityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "commutativity {}: max |[A,B_i]|_F = {:e}, max |[B_j,B_i]|_F = {:e} (tol {:e})",
            if self.pass { "pass" } else { "FAIL" },
            self.max_ab_commutator,
            self.max_bb_commutator,
            self.tolerance
        )
    }
}

/// `dX = (A X + F(X, t)) dt + Σ_i (B_i X + g_i(X)) dW_i`, `X(0) = x0` on `[0, T]`.
#[derive(Clone)]
pub struct SemilinearSde {
    name: String,
    a: DMatrix<f64>,
    b: Vec<DMatrix<f64>>,
    flow: LinearFlow,
    drift: DriftFn,
    drift_jacobian: Option<JacobianFn>,
    diffusion: Option<NonlinearDiffusion>,
    x0: DVector<f64>,
    horizon: f64,
    growth_exponent: f64,
    exact: Option<ExactSolution>,
    domain: Option<DomainFn>,
    commutator: CommutativityReport,
}

impl fmt::Debug for SemilinearSde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemilinearSde")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("drivers", &self.drivers())
            .field("horizon", &self.horizon)
            .field("nonlinear_diffusion", &self.diffusion.is_some())
            .finish()
    }
}

pub const COMMUTATOR_TOL: f64 = 1e-10;

impl SemilinearSde {
    pub fn new(
        name: impl Into<String>,
        a: DMatrix<f64>,
        b: Vec<DMatrix<f64>>,
        drift: DriftFn,
        x0: DVector<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let d = x0.len();
        if d == 0 {
            return Err(SdeError::Config("state dimension must be at least 1".into()));
        }
        if b.is_empty() {
            return Err(SdeError::Config("at least one driving Wiener process is required".into()));
        }
        if a.shape() != (d, d) {
            return Err(SdeError::dimension("A", format!("{d}x{d}"), format!("{}x{}", a.nrows(), a.ncols())));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SdeError::Config(format!("horizon T must be positive, got {horizon}")));
        }
        let flow = LinearFlow::new(&a, &b)?;
        let commutator = commutativity(&a, &b, COMMUTATOR_TOL)?;
        Ok(SemilinearSde {
            name: name.into(),
            a,
            b,
            flow,
            drift,
            drift_jacobian: None,
            diffusion: None,
            x0,
            horizon,
            growth_exponent: 1.0,
            exact: None,
            domain: None,
            commutator,
        })
    }

    pub fn with_jacobian(mut self, jac: JacobianFn) -> Self {
        self.drift_jacobian = Some(jac);
        self
    }

    pub fn with_diffusion(mut self, g: NonlinearDiffusion) -> Self {
        self.diffusion = Some(g);
        self
    }

    pub fn with_growth_exponent(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(SdeError::InvalidParameter {
                param: "growth_exponent_c".into(),
                reason: format!("must be positive, got {c}"),
            });
        }
        self.growth_exponent = c;
        Ok(self)
    }

    pub fn with_exact(mut self, exact: ExactSolution) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn with_domain(mut self, domain: DomainFn) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn with_initial_state(mut self, x0: DVector<f64>) -> Result<Self> {
        if x0.len() != self.dim() {
            return Err(SdeError::dimension("x0", self.dim(), x0.len()));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SdeError::Config(format!("horizon T must be positive, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    /// Same linear part with `F ≡ 0` and no nonlinear diffusion: a pure GBM.
    pub fn linear_part(&self) -> Self {
        let d = self.dim();
        let mut out = self.clone();
        out.name = format!("{}_linear", self.name);
        out.drift = Arc::new(move |_, _| DVector::zeros(d));
        out.drift_jacobian = Some(Arc::new(move |_, _| DMatrix::zeros(d, d)));
        out.diffusion = None;
        out.exact = None;
        out.domain = None;
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn drivers(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    pub fn flow(&self) -> &LinearFlow {
        &self.flow
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn growth_exponent(&self) -> f64 {
        self.growth_exponent
    }

    pub fn exact(&self) -> Option<ExactSolution> {
        self.exact
    }

    pub fn diffusion(&self) -> Option<&NonlinearDiffusion> {
        self.diffusion.as_ref()
    }

    pub fn has_nonlinear_diffusion(&self) -> bool {
        self.diffusion.is_some()
    }

    pub fn commutator(&self) -> &CommutativityReport {
        &self.commutator
    }

    pub fn drift(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        (self.drift)(x, t)
    }

    pub fn drift_jacobian(&self, x: &DVector<f64>, t: f64) -> Option<DMatrix<f64>> {
        self.drift_jacobian.as_ref().map(|j| j(x, t))
    }

    /// Full drift `A x + F(x, t)`.
    pub fn full_drift(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        &self.a * x + self.drift(x, t)
    }

    /// Nonlinear diffusion columns `g_i(x, t)` as a `d × m` matrix, if any.
    pub fn nonlinear_diffusion(&self, x: &DVector<f64>, t: f64) -> Option<DMatrix<f64>> {
        self.diffusion.as_ref().map(|g| (g.columns)(x, t))
    }

    /// Total diffusion `σ_i(x) = B_i x + g_i(x)` as a `d × m` matrix.
    pub fn full_diffusion(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let mut sigma = self.nonlinear_diffusion(x, t).unwrap_or_else(|| DMatrix::zeros(self.dim(), self.drivers()));
        for (i, bi) in self.b.iter().enumerate() {
            let col = bi * x;
            let mut target = sigma.column_mut(i);
            target += col;
        }
        sigma
    }

    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        self.domain.as_ref().is_none_or(|f| f(x))
    }
}

/// Frobenius norms of all `[A, B_i]` and `[B_j, B_i]`.
pub fn commutativity(a: &DMatrix<f64>, b: &[DMatrix<f64>], tol: f64) -> Result<CommutativityReport> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(SdeError::dimension("A", format!("{d}x{d}"), format!("{}x{}", d, a.ncols())));
    }
    for (i, bi) in b.iter().enumerate() {
        if bi.shape() != (d, d) {
            return Err(SdeError::dimension(
                format!("B[{i}]"),
                format!("{d}x{d}"),
                format!("{}x{}", bi.nrows(), bi.ncols()),
            ));
        }
    }
    let is_diag = |m: &DMatrix<f64>| (0..d).all(|r| (0..d).all(|c| r == c || m[(r, c)] == 0.0));
    let (ab, bb) = if is_diag(a) && b.iter().all(is_diag) {
        (0.0, 0.0)
    } else {
        let ab = b
            .iter()
            .map(|bi| (a * bi - bi * a).norm())
            .fold(0.0, f64::max);
        let mut bb: f64 = 0.0;
        for (i, bi) in b.iter().enumerate() {
            for bj in &b[i + 1..] {
                bb = bb.max((bj * bi - bi * bj).norm());
            }
        }
        (ab, bb)
    };
    Ok(CommutativityReport {
        max_ab_commutator: ab,
        max_bb_commutator: bb,
        pass: ab <= tol && bb <= tol,
        tolerance: tol,
    })
}

pub fn validate_commutativity(model: &SemilinearSde, tol: f64) -> Result<CommutativityReport> {
    if tol == model.commutator.tolerance {
        return Ok(model.commutator.clone());
    }
    commutativity(model.a(), model.b(), tol)
}

/// Names accepted by [`builtin_model`].
pub const BUILTIN_MODELS: [&str; 4] = ["ginzburg_landau", "hiv", "lotka_volterra", "tumor"];

/// Parameter names each built-in model requires.
pub fn required_params(name: &str) -> Result<&'static [&'static str]> {
    Ok(match name {
        "ginzburg_landau" => &["sigma"],
        "hiv" => &["lambda", "mu", "k", "alpha", "c", "gamma", "sigma1", "sigma2", "sigma3"],
        "lotka_volterra" => &["lambda", "beta", "delta", "gamma", "sigma1", "sigma2"],
        "tumor" => &["lambda", "mu", "k1", "k2", "sigma"],
        other => return Err(SdeError::UnknownModel(other.to_string())),
    })
}

/// Parameter sets used in the benchmark figures.
///
/// The HIV virion clearance rate `gamma` is not fixed by the figure; 1.0 is
/// used here.
pub fn default_params(name: &str) -> Result<ModelParams> {
    let pairs: &[(&str, f64)] = match name {
        "ginzburg_landau" => &[("sigma", 2.0)],
        "hiv" => &[
            ("lambda", 3.0),
            ("mu", 2.0),
            ("k", 0.5),
            ("alpha", 0.7),
            ("c", 0.1),
            ("gamma", 1.0),
            ("sigma1", 1.25),
            ("sigma2", 0.09),
            ("sigma3", 0.4),
        ],
        "lotka_volterra" => &[
            ("lambda", 0.8),
            ("beta", 0.15),
            ("delta", 0.75),
            ("gamma", 0.01),
            ("sigma1", 0.1),
            ("sigma2", 0.1),
        ],
        "tumor" => &[("lambda", 1.0), ("mu", 1.0), ("k1", 1.0), ("k2", 1.0), ("sigma", 1.5)],
        other => return Err(SdeError::UnknownModel(other.to_string())),
    };
    Ok(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
}

/// Smallest population value the tumor drift evaluates its logarithm at.
pub const TUMOR_FLOOR: f64 = 1e-12;

pub fn builtin_model(name: &str, params: &ModelParams) -> Result<SemilinearSde> {
    let required = required_params(name)?;
    let get = |key: &str| -> Result<f64> {
        let v = *params.get(key).ok_or_else(|| SdeError::MissingParameter {
            model: name.to_string(),
            param: key.to_string(),
        })?;
        if !v.is_finite() {
            return Err(SdeError::InvalidParameter {
                param: key.to_string(),
                reason: "must be finite".into(),
            });
        }
        Ok(v)
    };
    for key in required {
        get(key)?;
    }
    let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_row_slice(v));

    match name {
        "ginzburg_landau" => {
            let sigma = positive("sigma", get("sigma")?)?;
            let model = SemilinearSde::new(
                name,
                diag(&[-1.0 + sigma / 2.0]),
                vec![diag(&[sigma.sqrt()])],
                Arc::new(|x, _| x.map(|v| -v * v * v)),
                DVector::from_element(1, 1.0),
                1.0,
            )?
            .with_jacobian(Arc::new(|x, _| DMatrix::from_element(1, 1, -3.0 * x[0] * x[0])))
            .with_growth_exponent(2.0)?
            .with_exact(ExactSolution::GinzburgLandau { sigma });
            Ok(model)
        }
        "hiv" => {
            let (lambda, mu, k, alpha, c, gamma) =
                (get("lambda")?, get("mu")?, get("k")?, get("alpha")?, get("c")?, get("gamma")?);
            let (s1, s2, s3) = (get("sigma1")?, get("sigma2")?, get("sigma3")?);
            // T and I share W^1, V is driven by W^2.
            let b = vec![diag(&[s1, s2, 0.0]), diag(&[0.0, 0.0, s3])];
            SemilinearSde::new(
                name,
                diag(&[-mu, -alpha, -gamma]),
                b,
                Arc::new(move |x, _| {
                    let ktv = k * x[0] * x[2];
                    DVector::from_vec(vec![lambda - ktv, ktv, c * x[1] - ktv])
                }),
                DVector::from_vec(vec![0.5, 0.7, 0.9]),
                1.0,
            )?
            .with_jacobian(Arc::new(move |x, _| {
                let (t, v) = (x[0], x[2]);
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[-k * v, 0.0, -k * t, k * v, 0.0, k * t, -k * v, c, -k * t],
                )
            }))
            .with_growth_exponent(1.0)
        }
        "lotka_volterra" => {
            let (lambda, beta, delta, gamma) = (get("lambda")?, get("beta")?, get("delta")?, get("gamma")?);
            let (s1, s2) = (get("sigma1")?, get("sigma2")?);
            SemilinearSde::new(
                name,
                diag(&[lambda, -delta]),
                vec![diag(&[s1, 0.0]), diag(&[0.0, s2])],
                Arc::new(move |x, _| {
                    let xy = x[0] * x[1];
                    DVector::from_vec(vec![-beta * xy, gamma * xy])
                }),
                DVector::from_vec(vec![5.0, 10.0]),
                1.0,
            )?
            .with_jacobian(Arc::new(move |x, _| {
                DMatrix::from_row_slice(2, 2, &[-beta * x[1], -beta * x[0], gamma * x[1], gamma * x[0]])
            }))
            .with_growth_exponent(1.0)
        }
        "tumor" => {
            let (lambda, mu, k1, k2) = (get("lambda")?, get("mu")?, get("k1")?, get("k2")?);
            let sigma = positive("sigma", get("sigma")?)?;
            let kill = move |t: f64| {
                let v = 1.0 / (1.0 + t.cos());
                k1 * v / (k2 + v)
            };
            SemilinearSde::new(
                name,
                diag(&[0.0]),
                vec![diag(&[sigma])],
                Arc::new(move |x, t| {
                    let p = x[0].max(TUMOR_FLOOR);
                    DVector::from_element(1, (lambda * (mu / p).ln() - kill(t)) * x[0])
                }),
                DVector::from_element(1, 0.8),
                1.0,
            )?
            .with_jacobian(Arc::new(move |x, t| {
                let p = x[0].max(TUMOR_FLOOR);
                DMatrix::from_element(1, 1, lambda * (mu / p).ln() - lambda - kill(t))
            }))
            .with_domain(Arc::new(|x| x[0] >= TUMOR_FLOOR))
            .with_growth_exponent(1.0)
        }
        other => Err(SdeError::UnknownModel(other.to_string())),
    }
}

fn positive(param: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(SdeError::InvalidParameter {
            param: param.to_string(),
            reason: format!("must be positive, got {v}"),
        })
    }
}
