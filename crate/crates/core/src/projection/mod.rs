//! Stochastic projection of the period effects, the implied mortality rates,
//! old-age closure and life expectancies.

mod fan;
mod kannisto;
mod life;

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Gender, MAX_AGE};
use crate::dynamics::TimeSeriesFit;
use crate::lilee::LiLeeParams;

pub use fan::{fan_chart, write_fan_chart, FanChart, FanConfig, FanQuantity, FanRow, Probe};
pub use kannisto::{kannisto_close, ClosedCurve, KannistoFit, KANNISTO_FIT_AGES};
pub use life::{cohort_life_expectancy, period_life_expectancy, quantile, quantiles};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("horizon {horizon} must exceed the jump-off year {jump_off_year}")]
    Horizon { horizon: i32, jump_off_year: i32 },
    #[error("at least one path is required")]
    NoPaths,
    #[error("covariance matrix is not positive semi-definite")]
    Covariance,
    #[error("cohort life expectancy at age {age} from {year} needs rates through {needed}, horizon ends {horizon}")]
    ShortHorizon {
        age: u32,
        year: i32,
        needed: i32,
        horizon: i32,
    },
    #[error("quantiles need at least two values, got {0}")]
    TooFewValues(usize),
    #[error("probe {0} outside [0, 1]")]
    Probe(f64),
    #[error("model ages {first}..={last} do not cover the closure fit window")]
    ClosureWindow { first: u32, last: u32 },
    #[error("no parameters for {0}")]
    MissingGender(Gender),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub jump_off_year: i32,
    /// Final projection year.
    pub horizon: i32,
    pub n_paths: usize,
    pub seed: u64,
    /// `(K^M, kappa^M, K^F, kappa^F)` in the jump-off year.
    pub jump_off: [f64; 4],
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if self.horizon <= self.jump_off_year {
            return Err(ProjectionError::Horizon {
                horizon: self.horizon,
                jump_off_year: self.jump_off_year,
            });
        }
        if self.n_paths == 0 {
            return Err(ProjectionError::NoPaths);
        }
        Ok(())
    }

    pub fn n_years(&self) -> usize {
        (self.horizon - self.jump_off_year) as usize + 1
    }
}

/// Simulated `(K^M, kappa^M, K^F, kappa^F)` per path for the jump-off year
/// through the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPaths {
    pub jump_off_year: i32,
    pub horizon: i32,
    n_paths: usize,
    values: Vec<f64>,
}

impl SimulationPaths {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_years(&self) -> usize {
        (self.horizon - self.jump_off_year) as usize + 1
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.jump_off_year..=self.horizon
    }

    /// State of `path` in `year` (jump-off year included).
    pub fn state(&self, path: usize, year: i32) -> [f64; 4] {
        let j = (year - self.jump_off_year) as usize;
        let off = (path * self.n_years() + j) * 4;
        self.values[off..off + 4].try_into().unwrap()
    }

    /// `(K, kappa)` of one gender.
    pub fn effects(&self, path: usize, year: i32, gender: Gender) -> (f64, f64) {
        let s = self.state(path, year);
        match gender {
            Gender::Male => (s[0], s[1]),
            Gender::Female => (s[2], s[3]),
        }
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }
}

/// Lower-triangular factor `L` with `L L' = C`; falls back to a symmetric
/// square root when `C` is only semi-definite.
fn noise_factor(c: &Matrix4<f64>) -> Result<Matrix4<f64>, ProjectionError> {
    if let Some(ch) = c.cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(*c);
    let floor = -1e-12 * c.trace().abs().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return Err(ProjectionError::Covariance);
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix4::from_diagonal(&sqrt) * eig.eigenvectors.transpose())
}

fn step(fit: &TimeSeriesFit, prev: &[f64], noise: &Vector4<f64>, next: &mut [f64]) {
    let p = &fit.psi;
    next[0] = prev[0] + p[0] + noise[0];
    next[1] = p[1] + p[2] * prev[1] + noise[1];
    next[2] = prev[2] + p[3] + noise[2];
    next[3] = p[4] + p[5] * prev[3] + noise[3];
}

/// Simulates all paths. Path `i` draws from its own ChaCha stream `i` under
/// `seed`, so output is independent of thread count.
pub fn simulate_period_effects(fit: &TimeSeriesFit, spec: &ScenarioSpec) -> Result<SimulationPaths, ProjectionError> {
    spec.validate()?;
    let l = noise_factor(&fit.covariance_matrix())?;
    let ny = spec.n_years();
    let mut values = vec![0.0; spec.n_paths * ny * 4];
    values.par_chunks_mut(ny * 4).enumerate().for_each(|(i, path)| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        path[..4].copy_from_slice(&spec.jump_off);
        for j in 1..ny {
            let z = Vector4::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let noise = l * z;
            let (prev, next) = path.split_at_mut(j * 4);
            step(fit, &prev[(j - 1) * 4..], &noise, &mut next[..4]);
        }
    });
    Ok(SimulationPaths {
        jump_off_year: spec.jump_off_year,
        horizon: spec.horizon,
        n_paths: spec.n_paths,
        values,
    })
}

/// The single path with all innovations set to zero.
pub fn central_path(fit: &TimeSeriesFit, spec: &ScenarioSpec) -> Result<SimulationPaths, ProjectionError> {
    spec.validate()?;
    let ny = spec.n_years();
    let mut values = vec![0.0; ny * 4];
    values[..4].copy_from_slice(&spec.jump_off);
    for j in 1..ny {
        let (prev, next) = values.split_at_mut(j * 4);
        step(fit, &prev[(j - 1) * 4..], &Vector4::zeros(), &mut next[..4]);
    }
    Ok(SimulationPaths {
        jump_off_year: spec.jump_off_year,
        horizon: spec.horizon,
        n_paths: 1,
        values,
    })
}

/// One-year death probability for a constant force over the year.
pub fn mortality_rate(mu: f64) -> f64 {
    -(-mu).exp_m1()
}

/// Country forces of mortality over the model ages for given period effects.
pub fn mu_curve(params: &LiLeeParams, gender: Gender, k: f64, kappa: f64) -> Result<Vec<f64>, ProjectionError> {
    let p = params.population(gender).ok_or(ProjectionError::MissingGender(gender))?;
    Ok((0..params.ages.len()).map(|i| p.log_mu(i, k, kappa).exp()).collect())
}

/// `q` over the model ages for one path, year and gender.
pub fn paths_to_mortality(
    params: &LiLeeParams,
    paths: &SimulationPaths,
    path: usize,
    year: i32,
    gender: Gender,
) -> Result<Vec<f64>, ProjectionError> {
    let (k, kappa) = paths.effects(path, year, gender);
    Ok(mu_curve(params, gender, k, kappa)?.into_iter().map(mortality_rate).collect())
}

/// Closed force-of-mortality curve through age 120 for one path, year and gender.
pub fn closed_curve(
    params: &LiLeeParams,
    paths: &SimulationPaths,
    path: usize,
    year: i32,
    gender: Gender,
) -> Result<ClosedCurve, ProjectionError> {
    let (k, kappa) = paths.effects(path, year, gender);
    kannisto_close(&mu_curve(params, gender, k, kappa)?, params.ages.min())
}

/// Number of ages from `age` through the closing age.
pub fn ages_to_close(age: u32) -> usize {
    (MAX_AGE - age) as usize + 1
}

#[cfg(test)]
mod tests;
