//! Two-step conditional Poisson calibration of the multi-population
//! log-bilinear model and of its anchored (Lee–Miller style) variant.

mod io;
mod poisson;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::data::{AgeRange, AgeYearGrid, Country, DataError, Gender, MultiPopulationDataset, YearRange};

pub use io::{read_params, read_params_csv, write_params, write_params_csv};
pub use poisson::{poisson_loglik, saturated_loglik, FitDiagnostics, FitOptions};

use poisson::{fit_bilinear, BilinearProblem, PeriodConstraint};

#[derive(Debug, Error)]
pub enum LiLeeError {
    #[error("no deaths observed at age {age}: level parameter is unbounded")]
    ZeroDeathRow { age: u32 },
    #[error("no convergence after {sweeps} sweeps (log-likelihood {loglik})")]
    NonConvergence {
        sweeps: usize,
        loglik: f64,
        a: Vec<f64>,
        b: Vec<f64>,
        k: Vec<f64>,
    },
    #[error("log-anchor undefined: no {population} deaths at age {age} in {year}")]
    UndefinedAnchor { population: String, age: u32, year: i32 },
    #[error("anchor weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("calibration needs at least two years, got {0}")]
    TooFewYears(usize),
    #[error("no data for {country} {gender}")]
    MissingPopulation { country: String, gender: Gender },
    #[error("parameter file line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ModelKind {
    LiLee,
    /// Level parameters fixed to a blend of the last two observed log-rates
    /// with this weight on the final year; period effects vanish there.
    AdjustedLeeMiller { weight: f64 },
}

/// First-step fit on the pooled aggregate.
#[derive(Debug, Clone)]
pub struct CommonTrend {
    pub ages: AgeRange,
    pub years: YearRange,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k: Vec<f64>,
    pub loglik: f64,
    pub diagnostics: FitDiagnostics,
}

impl CommonTrend {
    pub fn log_mu(&self, i: usize, j: usize) -> f64 {
        self.a[i] + self.b[i] * self.k[j]
    }

    pub fn log_mu_grid(&self) -> AgeYearGrid {
        let (x0, t0) = (self.ages.min(), self.years.first());
        AgeYearGrid::from_fn(self.ages, self.years, |x, t| {
            self.log_mu((x - x0) as usize, (t - t0) as usize)
        })
    }
}

/// Second-step fit of the country deviation given the common trend.
#[derive(Debug, Clone)]
pub struct CountryDeviation {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub loglik: f64,
    pub diagnostics: FitDiagnostics,
}

/// Parameters of one gender.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl PopulationParams {
    /// Country log force of mortality at age index `i` for given period effects.
    pub fn log_mu(&self, i: usize, k: f64, kappa: f64) -> f64 {
        self.a[i] + self.b[i] * k + self.alpha[i] + self.beta[i] * kappa
    }

    pub fn log_mu_common(&self, i: usize, k: f64) -> f64 {
        self.a[i] + self.b[i] * k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiLeeParams {
    pub kind: ModelKind,
    pub ages: AgeRange,
    pub years: YearRange,
    pub populations: BTreeMap<Gender, PopulationParams>,
}

impl LiLeeParams {
    pub fn population(&self, gender: Gender) -> Option<&PopulationParams> {
        self.populations.get(&gender)
    }

    /// Country force of mortality at a calibration-period cell.
    pub fn evaluate_mu(&self, gender: Gender, age: u32, year: i32) -> Option<f64> {
        let p = self.population(gender)?;
        let i = self.ages.index(age)?;
        let j = self.years.index(year)?;
        Some(p.log_mu(i, p.k[j], p.kappa[j]).exp())
    }

    /// Country force of mortality for externally supplied period effects.
    pub fn evaluate_mu_with(&self, gender: Gender, age: u32, k: f64, kappa: f64) -> Option<f64> {
        let p = self.population(gender)?;
        let i = self.ages.index(age)?;
        Some(p.log_mu(i, k, kappa).exp())
    }
}

#[derive(Debug, Clone)]
pub struct FittedSurface {
    pub mu_common: AgeYearGrid,
    pub mu_country: AgeYearGrid,
    pub loglik_common: f64,
    pub loglik_country: f64,
    pub diagnostics_common: FitDiagnostics,
    pub diagnostics_country: FitDiagnostics,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub params: LiLeeParams,
    pub fitted: BTreeMap<Gender, FittedSurface>,
}

fn check_years(grid: &AgeYearGrid) -> Result<(), LiLeeError> {
    if grid.n_years() < 2 {
        return Err(LiLeeError::TooFewYears(grid.n_years()));
    }
    Ok(())
}

pub fn fit_common_trend(
    deaths: &AgeYearGrid,
    exposures: &AgeYearGrid,
    opts: &FitOptions,
) -> Result<CommonTrend, LiLeeError> {
    check_years(deaths)?;
    let fit = fit_bilinear(
        &BilinearProblem {
            deaths,
            exposures,
            offset: None,
            fixed_level: None,
            period: PeriodConstraint::SumToZero,
        },
        opts,
    )?;
    Ok(CommonTrend {
        ages: deaths.ages(),
        years: deaths.years(),
        a: fit.a,
        b: fit.b,
        k: fit.k,
        loglik: fit.loglik,
        diagnostics: fit.diagnostics,
    })
}

pub fn fit_country_deviation(
    deaths: &AgeYearGrid,
    exposures: &AgeYearGrid,
    common: &CommonTrend,
    opts: &FitOptions,
) -> Result<CountryDeviation, LiLeeError> {
    check_years(deaths)?;
    let offset = common.log_mu_grid();
    let fit = fit_bilinear(
        &BilinearProblem {
            deaths,
            exposures,
            offset: Some(offset.values()),
            fixed_level: None,
            period: PeriodConstraint::SumToZero,
        },
        opts,
    )?;
    Ok(CountryDeviation {
        alpha: fit.a,
        beta: fit.b,
        kappa: fit.k,
        loglik: fit.loglik,
        diagnostics: fit.diagnostics,
    })
}

/// Fixed level parameters of the anchored model.
#[derive(Debug, Clone, PartialEq)]
pub struct LeeMillerAnchors {
    pub weight: f64,
    /// `w ln m^T(t_max) + (1 - w) ln m^T(t_max - 1)` per age.
    pub common: Vec<f64>,
    /// Same blend of `ln(d^c / (E^c m^T))` per age.
    pub country: Vec<f64>,
}

pub fn lee_miller_anchors(
    pooled: (&AgeYearGrid, &AgeYearGrid),
    country: (&AgeYearGrid, &AgeYearGrid),
    weight: f64,
) -> Result<LeeMillerAnchors, LiLeeError> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(LiLeeError::InvalidWeight(weight));
    }
    let (dt, et) = pooled;
    let (dc, ec) = country;
    check_years(dt)?;
    let last = dt.n_years() - 1;
    let ages = dt.ages();
    let years = dt.years();
    let mut common = Vec::with_capacity(dt.n_ages());
    let mut dev = Vec::with_capacity(dt.n_ages());
    for i in 0..dt.n_ages() {
        let age = ages.min() + i as u32;
        let mut blend_t = 0.0;
        let mut blend_c = 0.0;
        for (j, w) in [(last, weight), (last - 1, 1.0 - weight)] {
            let year = years.first() + j as i32;
            let undefined = |population: &str| LiLeeError::UndefinedAnchor {
                population: population.into(),
                age,
                year,
            };
            if !(dt.at(i, j) > 0.0) {
                return Err(undefined("pooled"));
            }
            if !(dc.at(i, j) > 0.0) {
                return Err(undefined("country"));
            }
            let m_t = dt.at(i, j) / et.at(i, j);
            let m_c = dc.at(i, j) / (ec.at(i, j) * m_t);
            blend_t += w * m_t.ln();
            blend_c += w * m_c.ln();
        }
        common.push(blend_t);
        dev.push(blend_c);
    }
    Ok(LeeMillerAnchors {
        weight,
        common,
        country: dev,
    })
}

pub fn fit_common_trend_anchored(
    deaths: &AgeYearGrid,
    exposures: &AgeYearGrid,
    level: &[f64],
    opts: &FitOptions,
) -> Result<CommonTrend, LiLeeError> {
    check_years(deaths)?;
    let fit = fit_bilinear(
        &BilinearProblem {
            deaths,
            exposures,
            offset: None,
            fixed_level: Some(level),
            period: PeriodConstraint::Anchored(deaths.n_years() - 1),
        },
        opts,
    )?;
    Ok(CommonTrend {
        ages: deaths.ages(),
        years: deaths.years(),
        a: fit.a,
        b: fit.b,
        k: fit.k,
        loglik: fit.loglik,
        diagnostics: fit.diagnostics,
    })
}

pub fn fit_country_deviation_anchored(
    deaths: &AgeYearGrid,
    exposures: &AgeYearGrid,
    common: &CommonTrend,
    level: &[f64],
    opts: &FitOptions,
) -> Result<CountryDeviation, LiLeeError> {
    check_years(deaths)?;
    let offset = common.log_mu_grid();
    let fit = fit_bilinear(
        &BilinearProblem {
            deaths,
            exposures,
            offset: Some(offset.values()),
            fixed_level: Some(level),
            period: PeriodConstraint::Anchored(deaths.n_years() - 1),
        },
        opts,
    )?;
    Ok(CountryDeviation {
        alpha: fit.a,
        beta: fit.b,
        kappa: fit.k,
        loglik: fit.loglik,
        diagnostics: fit.diagnostics,
    })
}

fn assemble(
    kind: ModelKind,
    ages: AgeRange,
    years: YearRange,
    fits: Vec<(Gender, CommonTrend, CountryDeviation)>,
) -> Calibration {
    let mut populations = BTreeMap::new();
    let mut fitted = BTreeMap::new();
    for (gender, common, dev) in fits {
        let (x0, t0) = (ages.min(), years.first());
        let mu_common = AgeYearGrid::from_fn(ages, years, |x, t| {
            common.log_mu((x - x0) as usize, (t - t0) as usize).exp()
        });
        let mu_country = AgeYearGrid::from_fn(ages, years, |x, t| {
            let (i, j) = ((x - x0) as usize, (t - t0) as usize);
            (common.log_mu(i, j) + dev.alpha[i] + dev.beta[i] * dev.kappa[j]).exp()
        });
        fitted.insert(
            gender,
            FittedSurface {
                mu_common,
                mu_country,
                loglik_common: common.loglik,
                loglik_country: dev.loglik,
                diagnostics_common: common.diagnostics,
                diagnostics_country: dev.diagnostics,
            },
        );
        populations.insert(
            gender,
            PopulationParams {
                a: common.a,
                b: common.b,
                k: common.k,
                alpha: dev.alpha,
                beta: dev.beta,
                kappa: dev.kappa,
            },
        );
    }
    Calibration {
        params: LiLeeParams {
            kind,
            ages,
            years,
            populations,
        },
        fitted,
    }
}

fn country_grids<'d>(
    dataset: &'d MultiPopulationDataset,
    country: &Country,
    gender: Gender,
) -> Result<(&'d AgeYearGrid, &'d AgeYearGrid), LiLeeError> {
    let s = dataset
        .surface(country, gender)
        .ok_or_else(|| LiLeeError::MissingPopulation {
            country: country.to_string(),
            gender,
        })?;
    Ok((s.deaths(), s.exposures()))
}

/// Both steps for both genders of `country`, with the common trend fitted
/// on the dataset's pool.
pub fn fit_li_lee(
    dataset: &MultiPopulationDataset,
    country: &Country,
    opts: &FitOptions,
) -> Result<Calibration, LiLeeError> {
    let mut fits = Vec::new();
    for gender in Gender::BOTH {
        let (dt, et) = dataset.aggregate(gender);
        let common = fit_common_trend(&dt, &et, opts)?;
        let (dc, ec) = country_grids(dataset, country, gender)?;
        let dev = fit_country_deviation(dc, ec, &common, opts)?;
        fits.push((gender, common, dev));
    }
    Ok(assemble(ModelKind::LiLee, dataset.ages(), dataset.years(), fits))
}

pub fn fit_adjusted_lee_miller(
    dataset: &MultiPopulationDataset,
    country: &Country,
    weight: f64,
    opts: &FitOptions,
) -> Result<Calibration, LiLeeError> {
    let mut fits = Vec::new();
    for gender in Gender::BOTH {
        let (dt, et) = dataset.aggregate(gender);
        let (dc, ec) = country_grids(dataset, country, gender)?;
        let anchors = lee_miller_anchors((&dt, &et), (dc, ec), weight)?;
        let common = fit_common_trend_anchored(&dt, &et, &anchors.common, opts)?;
        let dev = fit_country_deviation_anchored(dc, ec, &common, &anchors.country, opts)?;
        fits.push((gender, common, dev));
    }
    Ok(assemble(
        ModelKind::AdjustedLeeMiller { weight },
        dataset.ages(),
        dataset.years(),
        fits,
    ))
}

/// Log-likelihood of `ln mu = offset + a + b k` on a grid.
pub fn bilinear_loglik(
    deaths: &AgeYearGrid,
    exposures: &AgeYearGrid,
    offset: Option<&AgeYearGrid>,
    a: &[f64],
    b: &[f64],
    k: &[f64],
) -> f64 {
    let nt = deaths.n_years();
    poisson_loglik(deaths, exposures, |i, j| {
        offset.map_or(0.0, |o| o.values()[i * nt + j]) + a[i] + b[i] * k[j]
    })
}

/// Analytic partial derivatives of [`bilinear_loglik`] in `a`, `b` and `k`.
pub fn bilinear_gradient(
    deaths: &AgeYearGrid,
    exposures: &AgeYearGrid,
    offset: Option<&AgeYearGrid>,
    a: &[f64],
    b: &[f64],
    k: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    poisson::full_gradient(deaths, exposures, offset.map(|o| o.values()), a, b, k)
}

#[cfg(test)]
mod tests;
