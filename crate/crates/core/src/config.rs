//! Flat `key=value` experiment configuration.
//!
//! ```text
//! # Ginzburg–Landau order check
//! model.name = ginzburg_landau
//! model.sigma = 2
//! run.T = 1
//! run.dt_factors = 1024,512,256,128,64,32
//! ```
//!
//! Keys live in dotted namespaces (`model.*`, `run.*`, `adaptive.*`,
//! `projected.*`, `spde.*`, `stress.*`); anything outside [`KNOWN_KEYS`] is
//! rejected. A [`Resolver`] reads values with their defaults and records
//! what was actually used so runs can echo their effective configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Result, SdeError};
use crate::harness::{ErrorNorm, ExperimentSpec, ReferenceKind};
use crate::integrators::{AdaptiveConfig, SchemeId};
use crate::sde_model::{builtin_model, default_params, required_params, SemilinearSde};
use crate::spectral_spde::{build_spde_model, SpdeConfig};

pub const KNOWN_KEYS: &[&str] = &[
    "model.name",
    "model.sigma",
    "model.lambda",
    "model.mu",
    "model.k",
    "model.alpha",
    "model.c",
    "model.gamma",
    "model.beta",
    "model.delta",
    "model.k1",
    "model.k2",
    "model.sigma1",
    "model.sigma2",
    "model.sigma3",
    "model.epsilon",
    "model.x0",
    "run.T",
    "run.M",
    "run.groups",
    "run.seed",
    "run.N_fine",
    "run.dt_factors",
    "run.schemes",
    "run.reference",
    "run.error_at",
    "adaptive.h_max",
    "adaptive.rho",
    "projected.kappa",
    "spde.d",
    "spde.grid_size",
    "stress.dt",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SdeError::Config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SdeError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(SdeError::Config(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| SdeError::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Reads typed values with defaults and records the effective settings.
#[derive(Debug)]
pub struct Resolver<'a> {
    cfg: &'a Config,
    resolved: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(cfg: &'a Config) -> Self {
        Resolver {
            cfg,
            resolved: BTreeMap::new(),
        }
    }

    fn value<T>(&mut self, key: &str, default: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match self.cfg.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| SdeError::Config(format!("{key} = '{raw}': {e}")))?,
            None => default.ok_or_else(|| SdeError::Config(format!("{key} is required")))?,
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.value(key, Some(default))
    }

    pub fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.value(key, Some(default))
    }

    pub fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        self.value(key, Some(default))
    }

    pub fn string(&mut self, key: &str, default: &str) -> Result<String> {
        self.value(key, Some(default.to_string()))
    }

    pub fn list<T>(&mut self, key: &str, default: &str) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.cfg.get(key).unwrap_or(default).to_string();
        let items = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| SdeError::Config(format!("{key} entry '{s}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if items.is_empty() {
            return Err(SdeError::Config(format!("{key} is empty")));
        }
        self.resolved.insert(key.to_string(), raw);
        Ok(items)
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// `key=value` lines of every setting used so far.
    pub fn resolved_lines(&self) -> Vec<String> {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}")).collect()
    }
}

fn join<T: Display>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Builds the model named by `model.name` (ignored when `spde` is set).
pub fn resolve_model(r: &mut Resolver<'_>, spde: bool) -> Result<SemilinearSde> {
    let horizon = r.f64("run.T", 1.0)?;
    let model = if spde {
        let modes = r.usize("spde.d", 32)?;
        let cfg = SpdeConfig {
            modes,
            epsilon: r.f64("model.epsilon", DEFAULT_SPDE_EPSILON)?,
            gamma: r.f64("model.gamma", 1.0)?,
            alpha: r.f64("model.alpha", 0.0)?,
            beta: r.f64("model.beta", 1.0)?,
            grid_size: r.usize("spde.grid_size", 2 * modes + 1)?,
            horizon,
        };
        r.record("model.name", "spde");
        build_spde_model(&cfg)?
    } else {
        let name = r.string("model.name", "ginzburg_landau")?;
        let defaults = default_params(&name)?;
        let mut params = defaults.clone();
        for p in required_params(&name)? {
            let v = r.f64(&format!("model.{p}"), defaults[*p])?;
            params.insert(p.to_string(), v);
        }
        builtin_model(&name, &params)?.with_horizon(horizon)?
    };
    let default_x0 = join(model.x0().iter());
    let x0: Vec<f64> = r.list("model.x0", &default_x0)?;
    if x0.len() != model.dim() {
        return Err(SdeError::Config(format!(
            "model.x0 has {} entries, model dimension is {}",
            x0.len(),
            model.dim()
        )));
    }
    model.with_initial_state(DVector::from_vec(x0))
}

/// Diffusion coefficient used for the SPDE when `model.epsilon` is unset.
pub const DEFAULT_SPDE_EPSILON: f64 = 0.1;

/// Builds the experiment from `run.*`, `adaptive.*` and `projected.*`.
pub fn resolve_experiment(r: &mut Resolver<'_>, model: SemilinearSde) -> Result<ExperimentSpec> {
    let general = model.has_nonlinear_diffusion();
    let default_scheme = if general { SchemeId::TamedEi0General } else { SchemeId::TamedEi0 };
    let default_reference = if model.exact().is_some() {
        "analytic".to_string()
    } else if model.name().starts_with("spde") {
        default_scheme.to_string()
    } else {
        SchemeId::TamedMilstein.to_string()
    };

    let schemes: Vec<SchemeId> = r.list("run.schemes", default_scheme.as_str())?;
    let reference: ReferenceKind = r.value("run.reference", Some(default_reference.parse()?))?;
    let mut spec = ExperimentSpec::new(model, schemes, reference);
    spec.paths = r.usize("run.M", 500)?;
    spec.groups = r.usize("run.groups", 20)?;
    spec.master_seed = r.u64("run.seed", 42)?;
    spec.fine_steps = r.usize("run.N_fine", 1 << 14)?;
    spec.factors = r.list("run.dt_factors", "1024,512,256,128,64,32")?;
    spec.error_at = r.value::<ErrorNorm>("run.error_at", Some(ErrorNorm::Endpoint))?;
    spec.adaptive_rho = r.f64("adaptive.rho", 32.0)?;
    spec.kappa = r.f64("projected.kappa", 1.0)?;
    if !(spec.kappa > 0.0) {
        return Err(SdeError::Config(format!("projected.kappa must be positive, got {}", spec.kappa)));
    }
    spec.validate()?;
    Ok(spec)
}

/// `adaptive.h_max` / `adaptive.rho` on a lattice of `fine_steps` steps.
pub fn resolve_adaptive(r: &mut Resolver<'_>, horizon: f64, fine_steps: usize) -> Result<AdaptiveConfig> {
    let delta = horizon / fine_steps as f64;
    let h_max = r.f64("adaptive.h_max", horizon / 16.0)?;
    let rho = r.f64("adaptive.rho", 32.0)?;
    let cfg = AdaptiveConfig::new(h_max, rho, delta)?;
    cfg.check_horizon(horizon)?;
    Ok(cfg)
}
