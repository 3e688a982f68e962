//! Spectral Galerkin reduction of
//!
//! ```text
//! du = [ε u_xx + u - γ u³] dt + [β u + α (1 - u)/(1 + u²)] dW,   x ∈ (0, 1)
//! ```
//!
//! with zero Dirichlet data, `u(x, 0) = sin(πx)` and a Q-Wiener process
//! `W = Σ_j (1/j) e_j β_j` on the eigenfunctions `e_j(x) = √2 sin(jπx)`.
//! The state is the vector of the first `d` sine coefficients.
//!
//! Nonlinear terms are evaluated pseudospectrally on `grid_size` interior
//! nodes `x_i = i/(n+1)`. On that grid `Σ_i e_j(x_i) e_k(x_i) = (n+1) δ_jk`,
//! so the inverse transform is `(n+1)^{-1}` times the transpose of the
//! forward one.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdeError};
use crate::sde_model::{NonlinearDiffusion, SemilinearSde};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdeConfig {
    pub modes: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub grid_size: usize,
    pub horizon: f64,
}

impl SpdeConfig {
    /// Config with `grid_size = 2d + 1`, which resolves the cubic term
    /// without aliasing.
    pub fn new(modes: usize, epsilon: f64, gamma: f64, alpha: f64, beta: f64, horizon: f64) -> Self {
        SpdeConfig {
            modes,
            epsilon,
            gamma,
            alpha,
            beta,
            grid_size: 2 * modes + 1,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(SdeError::Config("spde.d must be at least 1".into()));
        }
        if self.grid_size < 2 * self.modes {
            return Err(SdeError::Config(format!(
                "spde.grid_size = {} must be at least 2 * spde.d = {}",
                self.grid_size,
                2 * self.modes
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(SdeError::InvalidParameter {
                param: "epsilon".into(),
                reason: format!("must be positive, got {}", self.epsilon),
            });
        }
        if !(self.horizon > 0.0) {
            return Err(SdeError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        for (name, v) in [("gamma", self.gamma), ("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() {
                return Err(SdeError::InvalidParameter {
                    param: name.into(),
                    reason: "must be finite".into(),
                });
            }
        }
        Ok(())
    }
}

/// Forward and inverse sine transforms between `d` coefficients and
/// `grid_size` interior grid values.
#[derive(Debug, Clone)]
pub struct SineTransform {
    forward: DMatrix<f64>,
    inverse: DMatrix<f64>,
    nodes: Vec<f64>,
}

impl SineTransform {
    pub fn new(modes: usize, grid_size: usize) -> Result<Self> {
        if modes == 0 || grid_size < modes {
            return Err(SdeError::Config(format!(
                "sine transform needs 1 <= modes <= grid_size, got {modes} modes on {grid_size} nodes"
            )));
        }
        let h = 1.0 / (grid_size + 1) as f64;
        let nodes: Vec<f64> = (1..=grid_size).map(|i| i as f64 * h).collect();
        let forward = DMatrix::from_fn(grid_size, modes, |i, k| {
            2f64.sqrt() * ((k + 1) as f64 * PI * nodes[i]).sin()
        });
        let inverse = forward.transpose() * h;
        Ok(SineTransform { forward, inverse, nodes })
    }

    pub fn modes(&self) -> usize {
        self.forward.ncols()
    }

    pub fn grid_size(&self) -> usize {
        self.forward.nrows()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `u(x_i) = Σ_k c_k √2 sin(kπ x_i)`.
    pub fn to_grid(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        if coeffs.len() != self.modes() {
            return Err(SdeError::dimension("spectral coefficients", self.modes(), coeffs.len()));
        }
        Ok(&self.forward * coeffs)
    }

    /// Discrete projection onto the first `d` modes.
    pub fn to_coeffs(&self, values: &DVector<f64>) -> Result<DVector<f64>> {
        if values.len() != self.grid_size() {
            return Err(SdeError::dimension("grid values", self.grid_size(), values.len()));
        }
        Ok(&self.inverse * values)
    }

    /// `u(x)` at an arbitrary point, summing the series directly.
    pub fn evaluate(&self, coeffs: &DVector<f64>, x: f64) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * 2f64.sqrt() * ((k + 1) as f64 * PI * x).sin())
            .sum()
    }
}

pub fn sine_transform(coeffs: &DVector<f64>, grid_size: usize) -> Result<DVector<f64>> {
    SineTransform::new(coeffs.len(), grid_size)?.to_grid(coeffs)
}

pub fn inverse_sine_transform(values: &DVector<f64>, modes: usize) -> Result<DVector<f64>> {
    SineTransform::new(modes, values.len())?.to_coeffs(values)
}

/// Diagonal Galerkin system for the reaction–diffusion SPDE.
///
/// The linear noise `β u dW` is kept diagonal (`B_j = β/j · e_j e_jᵀ`) so the
/// linear parts commute; the `α` term enters through `g_j` when `α ≠ 0`.
pub fn build_spde_model(cfg: &SpdeConfig) -> Result<SemilinearSde> {
    cfg.validate()?;
    let d = cfg.modes;
    let transform = Arc::new(SineTransform::new(d, cfg.grid_size)?);
    let scale = DVector::from_fn(d, |j, _| 1.0 / (j + 1) as f64);

    let a = DMatrix::from_diagonal(&DVector::from_fn(d, |k, _| {
        let k = (k + 1) as f64;
        -cfg.epsilon * PI * PI * k * k + 1.0
    }));
    let b = (0..d)
        .map(|j| {
            let mut m = DMatrix::zeros(d, d);
            m[(j, j)] = cfg.beta * scale[j];
            m
        })
        .collect();

    let gamma = cfg.gamma;
    let tf = Arc::clone(&transform);
    let drift = Arc::new(move |x: &DVector<f64>, _t: f64| {
        let u = &tf.forward * x;
        &tf.inverse * u.map(|v| -gamma * v * v * v)
    });
    let tf = Arc::clone(&transform);
    let jacobian = Arc::new(move |x: &DVector<f64>, _t: f64| {
        let u = &tf.forward * x;
        let mut weighted = tf.forward.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= -3.0 * gamma * u[i] * u[i];
        }
        &tf.inverse * weighted
    });

    // x0 = e_1 / √2 so that u(x, 0) = sin(πx).
    let mut x0 = DVector::zeros(d);
    x0[0] = std::f64::consts::FRAC_1_SQRT_2;

    let mut model = SemilinearSde::new(format!("spde_d{d}"), a, b, drift, x0, cfg.horizon)?
        .with_jacobian(jacobian)
        .with_growth_exponent(2.0)?;

    if cfg.alpha != 0.0 {
        let alpha = cfg.alpha;
        // Noise basis on the grid, column j = (1/j) e_j(x_i).
        let noise_basis = Arc::new(DMatrix::from_fn(cfg.grid_size, d, |i, j| {
            transform.forward[(i, j)] * scale[j]
        }));
        let (tf, nb) = (Arc::clone(&transform), Arc::clone(&noise_basis));
        let columns = Arc::new(move |x: &DVector<f64>, _t: f64| {
            let u = &tf.forward * x;
            weighted_projection(&tf.inverse, &nb, &u.map(|v| alpha * (1.0 - v) / (1.0 + v * v)))
        });
        let (tf, nb) = (Arc::clone(&transform), Arc::clone(&noise_basis));
        let derivative = Arc::new(move |x: &DVector<f64>, _t: f64, v: &DVector<f64>| {
            let u = &tf.forward * x;
            let du = &tf.forward * v;
            let weights = u.zip_map(&du, |u, du| {
                let q = 1.0 + u * u;
                alpha * (u * u - 2.0 * u - 1.0) / (q * q) * du
            });
            weighted_projection(&tf.inverse, &nb, &weights)
        });
        model = model.with_diffusion(NonlinearDiffusion {
            columns,
            derivative: Some(derivative),
        });
    }
    Ok(model)
}

/// `P · diag(w) · N`: projects `w(x) · n_j(x)` back to coefficients for
/// every noise column `j`.
fn weighted_projection(inverse: &DMatrix<f64>, basis: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut weighted = basis.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= w[i];
    }
    inverse * weighted
}
