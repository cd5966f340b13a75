use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{FileShape, FileSpec, Method, RunConfig, SimulationConfig, SourceQuantity, SourceSpec, UngroupConfig};
use super::{ConfigError, PipelineError};
use crate::data::{
    write_individual_age_csv, write_weekly_csv, AgeBucket, BucketedWeeklySeries, Country, Gender, Provenance,
    SurfaceFragment, WeeklyCell, WeeklyShape, MAX_RECORDED_AGE, WEEKS_PER_YEAR,
};
use crate::projection::FanConfig;

const TOP_MODEL_AGE: u32 = 90;

/// Replaces the annual data of a country over a year span by a weekly file.
/// STMF carries deaths and exposures; EUROW carries deaths only, with the
/// exposures kept annual and an STMF copy written for the consistency check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Degradation {
    pub country: String,
    pub years: [i32; 2],
    pub shape: WeeklyShape,
}

/// Publishes a country's weekly data as constituent parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub country: String,
    pub parts: Vec<String>,
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureParams {
    pub seed: u64,
    pub country: String,
    pub pool: Vec<String>,
    pub years: [i32; 2],
    /// Exposure scale per country (person-years at age 0).
    pub populations: BTreeMap<String, f64>,
    /// True `(theta^M, c^M, phi^M, theta^F, c^F, phi^F)` before normalization.
    pub psi: [f64; 6],
    /// Innovation covariance of `(dK^M, kappa^M, dK^F, kappa^F)`.
    pub covariance: [[f64; 4]; 4],
    /// Innovation standard deviation of the other countries' deviations.
    pub deviation_sd: f64,
    /// Relative mortality shock in the final year, applied to every country.
    pub shock: f64,
    pub degrade: Vec<Degradation>,
    pub split: Option<Split>,
    pub method: Method,
    pub n_paths: usize,
    pub horizon: Option<i32>,
}

impl Default for FixtureParams {
    fn default() -> Self {
        let sd = [0.12, 0.04, 0.12, 0.04];
        let corr = |i: usize, j: usize| match (i, j) {
            _ if i == j => 1.0,
            (0, 2) | (2, 0) => 0.6,
            (1, 3) | (3, 1) => 0.5,
            _ => 0.0,
        };
        let mut covariance = [[0.0; 4]; 4];
        for (i, row) in covariance.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = corr(i, j) * sd[i] * sd[j];
            }
        }
        FixtureParams {
            seed: 20200,
            country: "AAA".into(),
            pool: vec!["AAA".into(), "BBB".into(), "UKX".into()],
            years: [1990, 2020],
            populations: [("AAA", 1.5e5), ("BBB", 2.5e5), ("UKX", 6e5)]
                .into_iter()
                .map(|(c, n)| (c.to_string(), n))
                .collect(),
            psi: [-0.2, 0.0, 0.8, -0.17, 0.0, 0.8],
            covariance,
            deviation_sd: 0.02,
            shock: 0.1,
            degrade: vec![
                Degradation {
                    country: "AAA".into(),
                    years: [2019, 2020],
                    shape: WeeklyShape::Stmf,
                },
                Degradation {
                    country: "BBB".into(),
                    years: [2020, 2020],
                    shape: WeeklyShape::Eurow,
                },
                Degradation {
                    country: "UKX".into(),
                    years: [2020, 2020],
                    shape: WeeklyShape::Stmf,
                },
            ],
            split: Some(Split {
                country: "UKX".into(),
                parts: vec!["UKX_ENW".into(), "UKX_SCO".into(), "UKX_NIR".into()],
                shares: vec![0.85, 0.1, 0.05],
            }),
            method: Method::WeightedLikelihood { weights: vec![0.0, 1.0] },
            n_paths: 500,
            horizon: None,
        }
    }
}

impl FixtureParams {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    fn countries(&self) -> Vec<String> {
        let mut all = self.pool.clone();
        if !all.contains(&self.country) {
            all.push(self.country.clone());
        }
        all
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.years[1] - self.years[0] < 7 {
            return invalid("fixture needs at least eight years".into());
        }
        for c in self.countries() {
            if !self.populations.get(&c).is_some_and(|n| *n > 0.0) {
                return invalid(format!("no positive population for {c}"));
            }
        }
        if Matrix4::from_fn(|i, j| self.covariance[i][j]).cholesky().is_none() {
            return invalid("covariance is not positive definite".into());
        }
        if !(self.shock > -1.0) {
            return invalid(format!("shock {} must exceed -1", self.shock));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.degrade {
            if !self.countries().contains(&d.country) {
                return invalid(format!("degraded country {} is not generated", d.country));
            }
            if d.years[0] <= self.years[0] || d.years[1] > self.years[1] || d.years[0] > d.years[1] {
                return invalid(format!("degraded years of {} must lie after the first year", d.country));
            }
            for t in d.years[0]..=d.years[1] {
                if !seen.insert((d.country.clone(), t)) {
                    return invalid(format!("{} {t} degraded twice", d.country));
                }
            }
        }
        if let Some(s) = &self.split {
            if s.parts.len() != s.shares.len() || s.parts.is_empty() {
                return invalid("split parts and shares differ in length".into());
            }
            if (s.shares.iter().sum::<f64>() - 1.0).abs() > 1e-12 || s.shares.iter().any(|v| !(*v > 0.0)) {
                return invalid("split shares must be positive and sum to 1".into());
            }
        }
        Ok(())
    }
}

/// True parameters of one (country, gender), normalized so that
/// `sum B^2 = sum beta^2 = 1` and `sum K = sum kappa = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTruth {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureTruth {
    pub years: [i32; 2],
    /// Keyed by country, then gender code.
    pub populations: BTreeMap<String, BTreeMap<String, PopulationTruth>>,
    /// Generating parameters of the country of interest, with the AR(1)
    /// intercepts adjusted for the normalization of `kappa`.
    pub psi: [f64; 6],
    pub covariance: [[f64; 4]; 4],
    pub shock: f64,
    pub config_path: PathBuf,
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn baseline(age: u32) -> f64 {
    let x = age as f64;
    2.5e-4 + 3e-5 * (0.095 * x).exp() + 4e-3 * (-2.0 * x).exp()
}

fn ar1(first: f64, c: f64, phi: f64, noise: &[f64]) -> Vec<f64> {
    let mut out = vec![first];
    for e in noise {
        let prev = *out.last().unwrap();
        out.push(c + phi * prev + e);
    }
    out
}

fn centered(v: Vec<f64>) -> (Vec<f64>, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.into_iter().map(|x| x - mean).collect(), mean)
}

/// Forces of mortality at ages 0..=110 for every year, ages 91 and up
/// extended log-linearly from the top of the model range.
fn rates(p: &PopulationTruth, shock: f64) -> Vec<Vec<f64>> {
    let n = p.k.len();
    (0..n)
        .map(|j| {
            let factor = if j + 1 == n { 1.0 + shock } else { 1.0 };
            let mut mu: Vec<f64> = (0..p.a.len())
                .map(|i| (p.a[i] + p.b[i] * p.k[j] + p.alpha[i] + p.beta[i] * p.kappa[j]).exp() * factor)
                .collect();
            let top = mu[TOP_MODEL_AGE as usize];
            let slope = ((top / mu[TOP_MODEL_AGE as usize - 10]).ln() / 10.0).max(0.05);
            for x in TOP_MODEL_AGE + 1..=MAX_RECORDED_AGE {
                mu.push((top * (slope * (x - TOP_MODEL_AGE) as f64).exp()).min(4.0));
            }
            mu
        })
        .collect()
}

/// Cohort-wave exposures whose old-age part grows steadily, so that the
/// open-bucket totals increase from year to year.
fn exposure(population: f64, age: u32, year: i32, first_year: i32) -> f64 {
    let x = age as f64;
    let survival = (-(0..age).map(baseline).sum::<f64>()).exp();
    let damp = (-(x - 60.0).max(0.0) / 10.0).exp();
    let wave = 1.0 + 0.08 * damp * ((year - age as i32) as f64 / 5.0).sin();
    let ramp = ((x - 50.0) / 30.0).clamp(0.0, 1.0);
    let growth = (0.015 * ramp * (year - first_year) as f64).exp();
    (population * survival * wave * growth).max(1.0)
}

fn iso_weeks(year: i32) -> u32 {
    NaiveDate::from_ymd_opt(year, 12, 28).expect("valid date").iso_week().week()
}

/// Weekly series whose annualization reproduces the bucket totals.
fn weekly_series(
    country: &str,
    gender: Gender,
    year: i32,
    shape: WeeklyShape,
    deaths: &[f64],
    exposures: &[f64],
    share: f64,
) -> Result<BucketedWeeklySeries, PipelineError> {
    let buckets = shape.buckets();
    let total = |b: &AgeBucket, v: &[f64]| -> f64 {
        (b.lower..=b.upper.unwrap_or(MAX_RECORDED_AGE)).map(|x| v[x as usize]).sum::<f64>() * share
    };
    let mut s = BucketedWeeklySeries::new(Country::new(country), gender, year, buckets.clone())?;
    for (i, b) in buckets.iter().enumerate() {
        let d = total(b, deaths) / WEEKS_PER_YEAR;
        let e = total(b, exposures) / WEEKS_PER_YEAR;
        for week in 1..=iso_weeks(year) {
            let cell = match shape {
                WeeklyShape::Stmf => WeeklyCell {
                    death_rate: Some(d / e),
                    ..WeeklyCell::with_exposure(d, e)
                },
                WeeklyShape::Eurow => WeeklyCell::deaths_only(d),
            };
            s.insert(i, week, cell)?;
        }
    }
    Ok(s)
}

fn source(country: &str, year: i32, quantity: SourceQuantity, file: &str) -> SourceSpec {
    SourceSpec {
        country: country.into(),
        years: [year, year],
        quantity,
        file: file.into(),
        parts: None,
        check_with: None,
    }
}

/// Joins single-year declarations that differ only in their years.
fn merge_spans(sources: Vec<SourceSpec>) -> Vec<SourceSpec> {
    let mut out: Vec<SourceSpec> = Vec::new();
    for s in sources {
        if let Some(last) = out.iter_mut().rev().find(|o| {
            o.country == s.country && o.quantity == s.quantity && o.file == s.file && o.parts == s.parts && o.check_with == s.check_with
        }) {
            if last.years[1] + 1 == s.years[0] {
                last.years[1] = s.years[1];
                continue;
            }
        }
        out.push(s);
    }
    out
}

/// Generates a multi-population dataset from known parameters, writes it in
/// the ingestion shapes under `out_dir` (with `config.toml` and `truth.json`)
/// and returns the truth.
pub fn make_synthetic_fixture(params: &FixtureParams, seed: u64, out_dir: &Path) -> Result<FixtureTruth, PipelineError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_years = (params.years[1] - params.years[0] + 1) as usize;
    let ages: Vec<u32> = (0..=TOP_MODEL_AGE).collect();
    let years: Vec<i32> = (params.years[0]..=params.years[1]).collect();

    let l = Matrix4::from_fn(|i, j| params.covariance[i][j]).cholesky().expect("validated").l();
    let noise: Vec<Vector4<f64>> = (1..n_years)
        .map(|_| l * Vector4::from_fn(|_, _| StandardNormal.sample(&mut rng)))
        .collect();
    let psi = params.psi;
    let mut truth_psi = psi;

    let mut populations: BTreeMap<String, BTreeMap<String, PopulationTruth>> = BTreeMap::new();
    for (g, gender) in Gender::BOTH.into_iter().enumerate() {
        let level = if gender == Gender::Female { 0.6f64.ln() } else { 0.0 };
        let a: Vec<f64> = ages.iter().map(|&x| baseline(x).ln() + level).collect();
        let b = normalized(ages.iter().map(|&x| 1.3 - x as f64 / 100.0).collect());
        let (theta, c, phi) = (psi[3 * g], psi[3 * g + 1], psi[3 * g + 2]);
        let dk: Vec<f64> = noise.iter().map(|n| theta + n[2 * g]).collect();
        let mut k = vec![0.0];
        for d in &dk {
            k.push(k.last().unwrap() + d);
        }
        let (k, _) = centered(k);
        for (ci, country) in params.countries().into_iter().enumerate() {
            let shift = ci as f64;
            let alpha: Vec<f64> = ages
                .iter()
                .map(|&x| 0.04 * (x as f64 / 9.0 + shift).sin() + 0.03 * (shift - 1.0))
                .collect();
            let beta = normalized(ages.iter().map(|&x| 1.0 + 0.4 * (x as f64 / 25.0 + shift).cos()).collect());
            let start = c / (1.0 - phi);
            let kappa = if country == params.country {
                let shocks: Vec<f64> = noise.iter().map(|n| n[2 * g + 1]).collect();
                let (kappa, mean) = centered(ar1(start, c, phi, &shocks));
                truth_psi[3 * g + 1] = c - (1.0 - phi) * mean;
                kappa
            } else {
                let shocks: Vec<f64> = (1..n_years)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        params.deviation_sd * z
                    })
                    .collect();
                centered(ar1(start, c, phi, &shocks)).0
            };
            populations.entry(country).or_default().insert(
                gender.code().to_string(),
                PopulationTruth {
                    a: a.clone(),
                    b: b.clone(),
                    k: k.clone(),
                    alpha,
                    beta,
                    kappa,
                },
            );
        }
    }

    let degraded = |c: &str, t: i32| {
        params
            .degrade
            .iter()
            .find(|d| d.country == c && (d.years[0]..=d.years[1]).contains(&t))
            .map(|d| d.shape)
    };
    let data_dir = out_dir.join("data");
    std::fs::create_dir_all(&data_dir).map_err(|e| PipelineError::io(&data_dir, e))?;
    let mut annual = SurfaceFragment::new();
    let mut stmf = Vec::new();
    let mut eurow = Vec::new();
    for (country, by_gender) in &populations {
        let population = params.populations[country];
        for gender in Gender::BOTH {
            let truth = &by_gender[gender.code()];
            let mu = rates(truth, params.shock);
            let c = Country::new(country.clone());
            for (j, &year) in years.iter().enumerate() {
                let e: Vec<f64> = (0..=MAX_RECORDED_AGE).map(|x| exposure(population, x, year, params.years[0])).collect();
                let d: Vec<f64> = e
                    .iter()
                    .zip(&mu[j])
                    .map(|(e, m)| Poisson::new(e * m).expect("positive mean").sample(&mut rng))
                    .collect();
                let shape = degraded(country, year);
                if shape != Some(WeeklyShape::Stmf) {
                    for x in 0..=MAX_RECORDED_AGE {
                        annual.insert_deaths(&c, gender, x, year, d[x as usize], Provenance::Hmd)?;
                        annual.insert_exposure(&c, gender, x, year, e[x as usize], Provenance::Hmd)?;
                    }
                }
                let Some(shape) = shape else { continue };
                let parts: Vec<(String, f64)> = match &params.split {
                    Some(s) if &s.country == country => s.parts.iter().cloned().zip(s.shares.iter().copied()).collect(),
                    _ => vec![(country.clone(), 1.0)],
                };
                for (part, share) in parts {
                    stmf.push(weekly_series(&part, gender, year, WeeklyShape::Stmf, &d, &e, share)?);
                    if shape == WeeklyShape::Eurow {
                        eurow.push(weekly_series(&part, gender, year, WeeklyShape::Eurow, &d, &e, share)?);
                    }
                }
            }
        }
    }
    write_individual_age_csv(&data_dir.join("annual.csv"), &annual)?;
    let mut files = BTreeMap::new();
    files.insert(
        "annual".to_string(),
        FileSpec {
            path: "data/annual.csv".into(),
            shape: FileShape::Hmd,
        },
    );
    if !stmf.is_empty() {
        write_weekly_csv(&data_dir.join("stmf.csv"), WeeklyShape::Stmf, &stmf, true)?;
        files.insert(
            "stmf".to_string(),
            FileSpec {
                path: "data/stmf.csv".into(),
                shape: FileShape::Stmf,
            },
        );
    }
    if !eurow.is_empty() {
        write_weekly_csv(&data_dir.join("eurow.csv"), WeeklyShape::Eurow, &eurow, false)?;
        files.insert(
            "eurow".to_string(),
            FileSpec {
                path: "data/eurow.csv".into(),
                shape: FileShape::Eurow,
            },
        );
    }

    let mut sources = Vec::new();
    for country in populations.keys() {
        let parts = match &params.split {
            Some(s) if &s.country == country => Some(s.parts.clone()),
            _ => None,
        };
        for &year in &years {
            match degraded(country, year) {
                None => sources.push(source(country, year, SourceQuantity::Both, "annual")),
                Some(WeeklyShape::Stmf) => sources.push(SourceSpec {
                    parts: parts.clone(),
                    ..source(country, year, SourceQuantity::Both, "stmf")
                }),
                Some(WeeklyShape::Eurow) => {
                    sources.push(source(country, year, SourceQuantity::Exposure, "annual"));
                    sources.push(SourceSpec {
                        parts: parts.clone(),
                        check_with: Some("stmf".into()),
                        ..source(country, year, SourceQuantity::Deaths, "eurow")
                    });
                }
            }
        }
    }
    let config = RunConfig {
        country: params.country.clone(),
        common_pool: params.pool.clone(),
        ages: [0, TOP_MODEL_AGE],
        years: params.years,
        method: params.method.clone(),
        simulation: SimulationConfig {
            n_paths: params.n_paths,
            horizon: params.horizon,
            seed,
        },
        fan: FanConfig::default(),
        ungrouping: UngroupConfig {
            aux_start_year: params.years[0],
            ..UngroupConfig::default()
        },
        output_dir: Some("output".into()),
        files,
        sources: merge_spans(sources),
    };
    config.validate()?;
    let config_path = out_dir.join("config.toml");
    std::fs::write(&config_path, config.to_toml()).map_err(|e| PipelineError::io(&config_path, e))?;
    let truth = FixtureTruth {
        years: params.years,
        populations,
        psi: truth_psi,
        covariance: params.covariance,
        shock: params.shock,
        config_path,
    };
    let truth_path = out_dir.join("truth.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n")
        .map_err(|e| PipelineError::io(&truth_path, e))?;
    Ok(truth)
}
