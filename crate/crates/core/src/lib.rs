//! Tamed exponential integrators for semilinear SDEs
//!
//! ```text
//! dX = (A X + F(X)) dt + Σ_i (B_i X + g_i(X)) dW_i
//! ```
//!
//! When `A` and the `B_i` commute, the linear part has the closed-form flow
//! `Φ = exp((A - ½ΣB_i²) Δt + Σ B_i ΔW_i)`, and the nonlinear drift is
//! treated explicitly (and tamed) inside it. The crate provides:
//!
//! - [`sde_model`]: the problem type, commutativity checks and the built-in
//!   benchmark models (Ginzburg–Landau, HIV, Lotka–Volterra, tumor growth).
//! - [`gbm_flow`]: the fundamental matrix of the linear SDE.
//! - [`wiener`]: reproducible fine-grid Brownian lattices with exact coarsening.
//! - [`integrators`]: GBM-based schemes and tamed/projected baselines.
//! - [`spectral_spde`]: spectral Galerkin reduction of a reaction–diffusion SPDE.
//! - [`harness`]: coupled RMSE experiments, slope fits and statistical checks.
//! - [`report`]: CSV serialization of experiment results.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod gbm_flow;
pub mod harness;
pub mod integrators;
pub mod report;
pub mod sde_model;
pub mod spectral_spde;
pub mod wiener;

pub use error::{Result, SdeError};
pub use gbm_flow::{flow_matrix, inverse_flow_matrix, matrix_exp, FlowMatrix, LinearFlow};
pub use harness::{ConvergenceReport, ExperimentSpec, ReferenceKind};
pub use integrators::{AdaptiveConfig, SchemeId, Trajectory};
pub use sde_model::{builtin_model, validate_commutativity, CommutativityReport, SemilinearSde};
pub use spectral_spde::{build_spde_model, SpdeConfig};
pub use wiener::{CoarseIncrements, WienerLattice};

pub use nalgebra::{DMatrix, DVector};
