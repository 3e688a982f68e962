//! Reproducible Brownian increment lattices.
//!
//! Every path gets its own ChaCha stream selected by `path_index` under a
//! shared `master_seed`, so a lattice can be regenerated bit-for-bit on any
//! worker. Coarse grids are obtained by summing fine increments left to
//! right, which makes coarse and fine solvers see the same Brownian path.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SdeError};

/// Fine-grid Brownian increments for `m` drivers, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerLattice {
    drivers: usize,
    steps: usize,
    horizon: f64,
    delta: f64,
    master_seed: u64,
    path_index: u64,
    increments: Vec<f64>,
}

/// Block sums of a lattice's increments over `factor` fine steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseIncrements {
    pub factor: usize,
    pub drivers: usize,
    pub delta: f64,
    increments: Vec<f64>,
}

impl CoarseIncrements {
    pub fn steps(&self) -> usize {
        self.increments.len() / self.drivers
    }

    pub fn step(&self, n: usize) -> &[f64] {
        &self.increments[n * self.drivers..(n + 1) * self.drivers]
    }
}

/// Per-path generator for `(master_seed, path_index)`.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

impl WienerLattice {
    pub fn sample(
        master_seed: u64,
        path_index: u64,
        drivers: usize,
        steps: usize,
        horizon: f64,
    ) -> Result<Self> {
        validate(drivers, steps, horizon)?;
        let delta = horizon / steps as f64;
        let sd = delta.sqrt();
        let mut rng = path_rng(master_seed, path_index);
        let increments = (0..drivers * steps)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(WienerLattice {
            drivers,
            steps,
            horizon,
            delta,
            master_seed,
            path_index,
            increments,
        })
    }

    /// Builds a lattice from explicit increments (step-major, `drivers` per step).
    pub fn from_increments(drivers: usize, horizon: f64, increments: Vec<f64>) -> Result<Self> {
        if drivers == 0 || !increments.len().is_multiple_of(drivers) {
            return Err(SdeError::dimension(
                "lattice increments",
                format!("a multiple of {drivers}"),
                increments.len(),
            ));
        }
        let steps = increments.len() / drivers;
        validate(drivers, steps, horizon)?;
        Ok(WienerLattice {
            drivers,
            steps,
            horizon,
            delta: horizon / steps as f64,
            master_seed: 0,
            path_index: 0,
            increments,
        })
    }

    pub fn drivers(&self) -> usize {
        self.drivers
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn step(&self, n: usize) -> &[f64] {
        &self.increments[n * self.drivers..(n + 1) * self.drivers]
    }

    pub fn coarsen(&self, factor: usize) -> Result<CoarseIncrements> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(SdeError::Config(format!(
                "coarsening factor {factor} does not divide {} fine steps",
                self.steps
            )));
        }
        let coarse = self.steps / factor;
        let mut increments = Vec::with_capacity(coarse * self.drivers);
        for block in 0..coarse {
            increments.extend(self.sum_range(block * factor, (block + 1) * factor));
        }
        Ok(CoarseIncrements {
            factor,
            drivers: self.drivers,
            delta: self.delta * factor as f64,
            increments,
        })
    }

    /// Sum of fine increments over `[i0, i1)`, per driver.
    pub fn increment_over(&self, i0: usize, i1: usize) -> Result<Vec<f64>> {
        if i0 >= i1 || i1 > self.steps {
            return Err(SdeError::Config(format!(
                "increment range [{i0}, {i1}) invalid for {} fine steps",
                self.steps
            )));
        }
        Ok(self.sum_range(i0, i1).collect())
    }

    fn sum_range(&self, i0: usize, i1: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.drivers).map(move |i| {
            let mut acc = 0.0;
            for n in i0..i1 {
                acc += self.increments[n * self.drivers + i];
            }
            acc
        })
    }

    /// Cumulative path `W(t_k)` of one driver at every fine node, `W(0) = 0`.
    pub fn path(&self, driver: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.steps + 1);
        let mut acc = 0.0;
        w.push(acc);
        for n in 0..self.steps {
            acc += self.increments[n * self.drivers + driver];
            w.push(acc);
        }
        w
    }

    /// Writes `m, N_fine, T, seed, path_index` followed by the raw
    /// increments, all little-endian 64-bit.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| SdeError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = |bytes: [u8; 8]| out.write_all(&bytes).map_err(|e| SdeError::io(path, e));
        write((self.drivers as u64).to_le_bytes())?;
        write((self.steps as u64).to_le_bytes())?;
        write(self.horizon.to_le_bytes())?;
        write(self.master_seed.to_le_bytes())?;
        write(self.path_index.to_le_bytes())?;
        for x in &self.increments {
            write(x.to_le_bytes())?;
        }
        out.flush().map_err(|e| SdeError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| SdeError::io(path, e))?;
        let mut input = BufReader::new(file);
        let mut read = || -> Result<[u8; 8]> {
            let mut buf = [0u8; 8];
            input.read_exact(&mut buf).map_err(|e| SdeError::io(path, e))?;
            Ok(buf)
        };
        let drivers = u64::from_le_bytes(read()?) as usize;
        let steps = u64::from_le_bytes(read()?) as usize;
        let horizon = f64::from_le_bytes(read()?);
        let master_seed = u64::from_le_bytes(read()?);
        let path_index = u64::from_le_bytes(read()?);
        validate(drivers, steps, horizon)?;
        let increments = (0..drivers * steps)
            .map(|_| read().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        Ok(WienerLattice {
            drivers,
            steps,
            horizon,
            delta: horizon / steps as f64,
            master_seed,
            path_index,
            increments,
        })
    }
}

fn validate(drivers: usize, steps: usize, horizon: f64) -> Result<()> {
    if drivers == 0 {
        return Err(SdeError::Config("lattice needs at least one driver".into()));
    }
    if steps == 0 {
        return Err(SdeError::Config("lattice needs at least one fine step".into()));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SdeError::Config(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}
