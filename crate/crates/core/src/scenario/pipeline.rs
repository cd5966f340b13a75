use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{Method, RunConfig, SourceSpec};
use super::report::{FileEntry, RunReport, ScenarioReport, ScenarioStatus};
use super::PipelineError;
use crate::data::{
    aggregate_series, annualize_weekly_deaths, annualize_weekly_exposure, check_eurostat_stmf_consistency,
    load_individual_age_csv, load_weekly_csv, AgeRange, BucketedAnnualSeries, BucketedWeeklySeries,
    ConsistencyOutcome, ConsistencyTolerance, Country, DataError, Gender, MultiPopulationDataset, Provenance,
    SurfaceFragment, YearRange, MAX_RECORDED_AGE,
};
use crate::dynamics::{build_design, fit_weighted_mle, last_year_weights, write_fit, PeriodEffectSeries, TimeSeriesFit, PSI_NAMES};
use crate::lilee::{fit_adjusted_lee_miller, fit_li_lee, write_params, Calibration, FitOptions};
use crate::projection::{
    central_path, fan_chart, simulate_period_effects, write_fan_chart, FanChart, FanQuantity, Probe, ScenarioSpec,
};
use crate::ungroup::{
    expected_deaths, expected_tail_deaths, fit_stable_auxiliary_model, ungroup_deaths, ungroup_exposures,
    AuxiliaryModel, DeathReference, UngroupError,
};

/// Overrides applied on top of a configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory against which relative paths in the configuration resolve.
    pub base_dir: PathBuf,
    pub out_dir: Option<PathBuf>,
    /// Scenario worker threads; defaults to the number of scenarios.
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub fit: FitOptions,
}

impl RunOptions {
    pub fn for_config_file(path: &Path) -> Self {
        RunOptions {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ..Default::default()
        }
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self, config: &RunConfig) -> PathBuf {
        match &self.out_dir {
            Some(p) => p.clone(),
            None => self.resolve(config.output_dir.as_deref().unwrap_or(Path::new("output"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct AuxiliarySummary {
    pub country: String,
    pub first_year: i32,
    pub last_year: i32,
    pub stationary: bool,
    pub phi_male: f64,
    pub phi_female: f64,
}

/// Ingested, ungrouped and assembled inputs shared by every scenario.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// All declared cells, with ungrouped ones marked `VIRTUAL`.
    pub fragment: SurfaceFragment,
    pub dataset: MultiPopulationDataset,
    pub warnings: Vec<String>,
    pub auxiliary: Vec<AuxiliarySummary>,
    /// `(name, sha256)` of every input file.
    pub inputs: Vec<(String, String)>,
}

enum Loaded {
    Annual(SurfaceFragment),
    Weekly(Vec<BucketedWeeklySeries>),
}

#[derive(Default)]
struct WeeklyYear {
    deaths: Option<BucketedAnnualSeries>,
    exposure: Option<BucketedAnnualSeries>,
}

fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn find_series<'a>(
    series: &'a [BucketedWeeklySeries],
    country: &str,
    year: i32,
    gender: Gender,
) -> Option<&'a BucketedWeeklySeries> {
    series
        .iter()
        .find(|s| s.country.as_str() == country && s.year == year && s.gender == gender)
}

fn assemble_weekly(
    loaded: &BTreeMap<String, Loaded>,
    file: &str,
    source: &SourceSpec,
    year: i32,
    gender: Gender,
) -> Result<BucketedWeeklySeries, PipelineError> {
    let Some(Loaded::Weekly(series)) = loaded.get(file) else {
        return Err(PipelineError::Missing(format!("`{file}` is not a weekly file")));
    };
    let parts = source
        .parts()
        .iter()
        .map(|p| {
            find_series(series, p, year, gender).cloned().ok_or_else(|| PipelineError::MissingWeekly {
                country: p.clone(),
                gender,
                year,
                file: file.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if parts.len() == 1 && parts[0].country.as_str() == source.country {
        return Ok(parts.into_iter().next().unwrap());
    }
    Ok(aggregate_series(&parts, Country::new(source.country.clone()))?)
}

fn load_files(config: &RunConfig, options: &RunOptions) -> Result<(BTreeMap<String, Loaded>, Vec<(String, String)>), PipelineError> {
    let mut loaded = BTreeMap::new();
    let mut hashes = Vec::new();
    for (name, spec) in &config.files {
        let path = options.resolve(&spec.path);
        hashes.push((name.clone(), sha256_file(&path)?));
        let data = match (spec.shape.annual(), spec.shape.weekly()) {
            (Some(shape), _) => Loaded::Annual(load_individual_age_csv(&path, shape)?),
            (_, Some(shape)) => Loaded::Weekly(load_weekly_csv(&path, shape)?),
            _ => unreachable!("every shape is annual or weekly"),
        };
        loaded.insert(name.clone(), data);
    }
    Ok((loaded, hashes))
}

fn is_annual(config: &RunConfig, source: Option<&SourceSpec>) -> bool {
    source.is_some_and(|s| config.files[&s.file].shape.annual().is_some())
}

/// Observed individual-age cells, each taken from the file declared for it.
fn observed_fragment(config: &RunConfig, loaded: &BTreeMap<String, Loaded>) -> Result<SurfaceFragment, PipelineError> {
    let mut fragment = SurfaceFragment::new();
    for (name, data) in loaded {
        let Loaded::Annual(f) = data else { continue };
        let declared = |c: &Country, t: i32, deaths: bool| {
            config.source_for(c.as_str(), t, deaths).is_some_and(|s| &s.file == name)
        };
        let part = f.clone().filter(|c, t| declared(c, t, true), |c, t| declared(c, t, false));
        fragment = fragment.merge(part)?;
    }
    Ok(fragment)
}

/// Annualized weekly data per (country, year, gender) for every weekly declaration.
fn weekly_years(
    config: &RunConfig,
    loaded: &BTreeMap<String, Loaded>,
) -> Result<BTreeMap<(String, i32, Gender), WeeklyYear>, PipelineError> {
    let mut out: BTreeMap<(String, i32, Gender), WeeklyYear> = BTreeMap::new();
    for s in &config.sources {
        if config.files[&s.file].shape.weekly().is_none() {
            continue;
        }
        for year in s.years[0]..=s.years[1] {
            for gender in Gender::BOTH {
                let series = assemble_weekly(loaded, &s.file, s, year, gender)?;
                if let Some(other) = &s.check_with {
                    let stmf = assemble_weekly(loaded, other, s, year, gender)?;
                    let outcome = check_eurostat_stmf_consistency(&series, &stmf, ConsistencyTolerance::default());
                    let detail = match outcome {
                        ConsistencyOutcome::Consistent => None,
                        ConsistencyOutcome::Inconsistent(m) => Some(format!(
                            "{} mismatched bucket-weeks, first {} week {}",
                            m.len(),
                            m[0].bucket,
                            m[0].week
                        )),
                        ConsistencyOutcome::NotComparable(why) => Some(why),
                    };
                    if let Some(detail) = detail {
                        return Err(PipelineError::Inconsistent {
                            country: s.country.clone(),
                            gender,
                            year,
                            detail,
                        });
                    }
                }
                let entry = out.entry((s.country.clone(), year, gender)).or_default();
                if s.quantity.covers_deaths() {
                    entry.deaths = Some(annualize_weekly_deaths(&series)?);
                }
                if s.quantity.covers_exposure() {
                    entry.exposure = Some(annualize_weekly_exposure(&series)?);
                }
            }
        }
    }
    Ok(out)
}

/// Years on which the auxiliary model for `country` is calibrated: the
/// longest run of years ending just before the first weekly year of any
/// involved country in which all of them are observed at individual ages.
fn auxiliary_years(config: &RunConfig, country: &str, weekly: &BTreeSet<(String, i32)>) -> Result<YearRange, PipelineError> {
    let mut members = config.common_pool.clone();
    if !members.iter().any(|c| c == country) {
        members.push(country.to_string());
    }
    let first_weekly = weekly
        .iter()
        .filter(|(c, _)| members.contains(c))
        .map(|(_, t)| *t)
        .min()
        .expect("called for a country with weekly years");
    let last = first_weekly - 1;
    let observed = |t: i32| {
        members.iter().all(|c| {
            is_annual(config, config.source_for(c, t, true)) && is_annual(config, config.source_for(c, t, false))
        })
    };
    let mut first = last + 1;
    while first > config.ungrouping.aux_start_year && observed(first - 1) {
        first -= 1;
    }
    if last - first < 7 {
        return Err(PipelineError::Missing(format!(
            "auxiliary model for {country} needs eight fully observed years before {first_weekly}"
        )));
    }
    Ok(YearRange::new(first, last)?)
}

fn build_dataset(
    fragment: &SurfaceFragment,
    countries: &[String],
    pool: &[String],
    ages: AgeRange,
    years: YearRange,
) -> Result<MultiPopulationDataset, DataError> {
    let mut surfaces = Vec::new();
    for c in countries {
        for g in Gender::BOTH {
            surfaces.push(fragment.to_surface(&Country::new(c.clone()), g, ages, years)?);
        }
    }
    MultiPopulationDataset::new(surfaces, pool.iter().cloned().map(Country::new).collect())
}

/// Deaths of the latest year before `year` observed at individual ages, from
/// age 0 upwards while cells are present.
fn reference_deaths(fragment: &SurfaceFragment, country: &Country, gender: Gender, year: i32) -> Option<(i32, Vec<f64>)> {
    let observed = |t: i32| {
        fragment
            .get(country, gender, 0, t)
            .and_then(|c| c.deaths)
            .is_some_and(|d| d.provenance != Provenance::Virtual)
    };
    let r = (year - 200..year).rev().find(|&t| observed(t))?;
    let deaths = (0..=MAX_RECORDED_AGE)
        .map_while(|x| fragment.get(country, gender, x, r).and_then(|c| c.deaths).map(|d| d.value))
        .collect();
    Some((r, deaths))
}

fn full_exposure(fragment: &SurfaceFragment, country: &Country, gender: Gender, year: i32) -> Option<Vec<f64>> {
    let top = fragment.top_exposure_age(country, gender, year)?;
    fragment.exposure_curve(country, gender, year, AgeRange::new(0, top).ok()?)
}

fn ungroup_year(
    config: &RunConfig,
    fragment: &mut SurfaceFragment,
    aux: &AuxiliaryModel,
    country: &Country,
    gender: Gender,
    year: i32,
    data: &WeeklyYear,
    warnings: &mut Vec<String>,
) -> Result<(), UngroupError> {
    let missing = |what: &str, t: i32| UngroupError::MissingReference(format!("{what} for {country} {gender} {t}"));
    if let Some(series) = &data.exposure {
        let prev = full_exposure(fragment, country, gender, year - 1).ok_or_else(|| missing("exposures", year - 1))?;
        let curve = ungroup_exposures(&prev, year - 1, series)?;
        for (age, &v) in curve.values.iter().enumerate() {
            fragment.insert_exposure(country, gender, age as u32, year, v, Provenance::Virtual)?;
        }
        warnings.extend(curve.warnings.iter().map(|w| format!("{country} {gender} {year} exposures: {w}")));
    }
    if let Some(series) = &data.deaths {
        let top = config.ages[1];
        let exposures = full_exposure(fragment, country, gender, year).ok_or_else(|| missing("exposures", year))?;
        if exposures.len() <= top as usize {
            return Err(missing("exposures above the top model age", year));
        }
        let mu = aux.central_mu(gender, year)?;
        let expected = expected_deaths(&mu, &exposures[..=top as usize]);
        let closed = aux.central_closed_mu(gender, year)?;
        let tail = expected_tail_deaths(&closed, &exposures, top);
        let allocation = match gender {
            Gender::Male => config.ungrouping.allocation_male,
            Gender::Female => config.ungrouping.allocation_female,
        };
        let reference = reference_deaths(fragment, country, gender, year);
        let reference = reference.as_ref().map(|(r, d)| DeathReference {
            year: *r,
            deaths: d,
            allocation,
        });
        let curve = ungroup_deaths(&expected, year, series, reference, tail)?;
        for (age, &v) in curve.values.iter().enumerate() {
            fragment.insert_deaths(country, gender, age as u32, year, v, Provenance::Virtual)?;
        }
        warnings.extend(curve.warnings.iter().map(|w| format!("{country} {gender} {year} deaths: {w}")));
    }
    Ok(())
}

/// Loads every declared file, ungroups the bucketed years and assembles the
/// calibration dataset.
pub fn prepare_data(config: &RunConfig, options: &RunOptions) -> Result<PreparedData, PipelineError> {
    config.validate()?;
    let (loaded, inputs) = load_files(config, options)?;
    let mut fragment = observed_fragment(config, &loaded)?;
    let weekly = weekly_years(config, &loaded)?;
    let ages = AgeRange::new(config.ages[0], config.ages[1])?;
    let weekly_keys: BTreeSet<(String, i32)> = weekly.keys().map(|(c, t, _)| (c.clone(), *t)).collect();
    let weekly_countries: BTreeSet<String> = weekly_keys.iter().map(|(c, _)| c.clone()).collect();

    let mut warnings = Vec::new();
    let mut auxiliary = Vec::new();
    for c in &weekly_countries {
        let country = Country::new(c.clone());
        let years = auxiliary_years(config, c, &weekly_keys)?;
        let mut members = config.common_pool.clone();
        if !members.contains(c) {
            members.push(c.clone());
        }
        let aux_data = build_dataset(&fragment, &members, &config.common_pool, ages, years)?;
        let aux = fit_stable_auxiliary_model(
            &aux_data,
            &country,
            config.ungrouping.aux_start_year,
            config.ungrouping.aux_retry_step,
            &options.fit,
        )
        .map_err(|source| PipelineError::Auxiliary {
            country: c.clone(),
            source,
        })?;
        if !aux.is_stable() {
            warnings.push(format!(
                "{c}: no stationary auxiliary model found; using the fit from {}",
                aux.years.first()
            ));
        }
        auxiliary.push(AuxiliarySummary {
            country: c.clone(),
            first_year: aux.years.first(),
            last_year: aux.years.last(),
            stationary: aux.is_stable(),
            phi_male: aux.dynamics.phi(Gender::Male),
            phi_female: aux.dynamics.phi(Gender::Female),
        });
        for ((_, year, gender), data) in weekly.range((c.clone(), i32::MIN, Gender::Male)..=(c.clone(), i32::MAX, Gender::Female)) {
            ungroup_year(config, &mut fragment, &aux, &country, *gender, *year, data, &mut warnings).map_err(|source| {
                PipelineError::Ungroup {
                    country: c.clone(),
                    gender: *gender,
                    year: *year,
                    source,
                }
            })?;
        }
    }

    let years = YearRange::new(config.years[0], config.years[1])?;
    let dataset = build_dataset(&fragment, &config.countries(), &config.common_pool, ages, years)?;
    Ok(PreparedData {
        fragment,
        dataset,
        warnings,
        auxiliary,
        inputs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Calibration,
    Dynamics,
    Simulation,
    Summary,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFailure {
    pub stage: Stage,
    pub message: String,
}

impl ScenarioFailure {
    fn at(stage: Stage) -> impl FnOnce(&dyn std::fmt::Display) -> ScenarioFailure {
        move |e| ScenarioFailure {
            stage,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub calibration: Calibration,
    pub dynamics: TimeSeriesFit,
    pub fan: FanChart,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub id: String,
    pub value: f64,
    pub outcome: Result<ScenarioOutput, ScenarioFailure>,
    pub seconds: f64,
}

fn project(
    config: &RunConfig,
    seed: u64,
    calibration: Calibration,
    weight: f64,
) -> Result<ScenarioOutput, ScenarioFailure> {
    let series = PeriodEffectSeries::from_params(&calibration.params).map_err(|e| ScenarioFailure::at(Stage::Dynamics)(&e))?;
    let rows = build_design(&series);
    let dynamics =
        fit_weighted_mle(&rows, &last_year_weights(rows.len(), weight)).map_err(|e| ScenarioFailure::at(Stage::Dynamics)(&e))?;
    let spec = ScenarioSpec {
        jump_off_year: config.jump_off_year(),
        horizon: config.horizon(),
        n_paths: config.simulation.n_paths,
        seed,
        jump_off: series.jump_off(),
    };
    let sim = |e: crate::projection::ProjectionError| ScenarioFailure::at(Stage::Simulation)(&e);
    let paths = simulate_period_effects(&dynamics, &spec).map_err(sim)?;
    let central = central_path(&dynamics, &spec).map_err(sim)?;
    let fan = fan_chart(&calibration.params, &paths, &central, &config.fan)
        .map_err(|e| ScenarioFailure::at(Stage::Summary)(&e))?;
    Ok(ScenarioOutput {
        calibration,
        dynamics,
        fan,
    })
}

/// Runs every grid point of the method on a prepared dataset. Weighted
/// likelihood scenarios share one calibration; adjusted Lee-Miller
/// scenarios calibrate once per weight. Results keep grid order.
pub fn run_scenarios(config: &RunConfig, dataset: &MultiPopulationDataset, options: &RunOptions) -> Vec<ScenarioResult> {
    let country = Country::new(config.country.clone());
    let seed = options.seed.unwrap_or(config.simulation.seed);
    let grid = config.method.grid().to_vec();
    let shared = match &config.method {
        Method::WeightedLikelihood { .. } => Some(fit_li_lee(dataset, &country, &options.fit)),
        Method::AdjustedLeeMiller { .. } => None,
    };
    let run_one = |value: f64| {
        let start = Instant::now();
        let outcome = match (&config.method, &shared) {
            (Method::WeightedLikelihood { .. }, Some(Ok(cal))) => project(config, seed, cal.clone(), value),
            (Method::WeightedLikelihood { .. }, Some(Err(e))) => Err(ScenarioFailure::at(Stage::Calibration)(e)),
            _ => fit_adjusted_lee_miller(dataset, &country, value, &options.fit)
                .map_err(|e| ScenarioFailure::at(Stage::Calibration)(&e))
                .and_then(|cal| project(config, seed, cal, 1.0)),
        };
        let id = config.method.scenario_id(value);
        let seconds = start.elapsed().as_secs_f64();
        match &outcome {
            Ok(_) => log::info!("scenario {id} done in {seconds:.1}s"),
            Err(f) => log::info!("scenario {id} failed at {:?} after {seconds:.1}s", f.stage),
        }
        ScenarioResult {
            id,
            value,
            outcome,
            seconds,
        }
    };
    let jobs = options.jobs.unwrap_or(grid.len()).max(1);
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| grid.par_iter().map(|&v| run_one(v)).collect()),
        Err(e) => {
            log::warn!("cannot build a {jobs}-thread pool ({e}); using the global pool");
            grid.par_iter().map(|&v| run_one(v)).collect()
        }
    }
}

fn quantities(config: &RunConfig, out: &ScenarioOutput) -> BTreeMap<String, f64> {
    let mut q = BTreeMap::new();
    for (g, fitted) in &out.calibration.fitted {
        q.insert(format!("calibration.loglik_common.{}", g.code()), fitted.loglik_common);
        q.insert(format!("calibration.loglik_country.{}", g.code()), fitted.loglik_country);
    }
    for (i, name) in PSI_NAMES.iter().enumerate() {
        q.insert(name.to_string(), out.dynamics.psi[i]);
        q.insert(format!("se.{name}"), out.dynamics.std_errors[i]);
    }
    for i in 0..4 {
        for j in i..4 {
            q.insert(format!("C_{}{}", i + 1, j + 1), out.dynamics.covariance[i][j]);
        }
    }
    q.insert("dynamics.loglik".into(), out.dynamics.loglik);
    let year = config.jump_off_year();
    for row in out.fan.rows.iter().filter(|r| r.year == year) {
        if matches!(row.quantity, FanQuantity::PeriodLifeExpectancy | FanQuantity::CohortLifeExpectancy) {
            let probe = match row.probe {
                Probe::Best => "best".to_string(),
                Probe::Level(p) => p.to_string(),
            };
            q.insert(
                format!(
                    "{}.{}.{}.{}.{}",
                    row.quantity.label(),
                    row.gender.code(),
                    row.age.unwrap_or_default(),
                    row.year,
                    probe
                ),
                row.value,
            );
        }
    }
    q
}

struct Outputs {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Outputs {
    fn write(
        &mut self,
        relative: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), PipelineError> {
        let path = self.root.join(relative);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| PipelineError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| PipelineError::io(&path, e))?;
        drop(w);
        self.files.push(FileEntry {
            path: relative.to_string(),
            sha256: sha256_file(&path)?,
        });
        Ok(())
    }
}

fn write_virtual_cells<W: Write>(out: &mut W, fragment: &SurfaceFragment) -> std::io::Result<()> {
    writeln!(out, "country,year,gender,age,quantity,value")?;
    for ((c, g, t, x), cell) in fragment.iter() {
        for (name, v) in [("deaths", cell.deaths), ("exposure", cell.exposure)] {
            if let Some(v) = v.filter(|v| v.provenance == Provenance::Virtual) {
                writeln!(out, "{c},{t},{},{x},{name},{:.16e}", g.code(), v.value)?;
            }
        }
    }
    Ok(())
}

/// Writes every artifact and returns the report; `report.json` and
/// `timings.json` are written last.
pub fn write_outputs(
    config: &RunConfig,
    config_sha256: &str,
    seed: u64,
    out_dir: &Path,
    prepared: &PreparedData,
    results: &[ScenarioResult],
    prepare_seconds: f64,
) -> Result<RunReport, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let mut outputs = Outputs {
        root: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    outputs.write("virtual_cells.csv", |w| write_virtual_cells(w, &prepared.fragment))?;
    let mut scenarios = Vec::new();
    for r in results {
        let report = match &r.outcome {
            Ok(out) => {
                outputs.write(&format!("{}/params.csv", r.id), |w| write_params(w, &out.calibration.params))?;
                outputs.write(&format!("{}/dynamics.csv", r.id), |w| write_fit(w, &out.dynamics))?;
                outputs.write(&format!("{}/fan_chart.csv", r.id), |w| write_fan_chart(w, &out.fan))?;
                ScenarioReport {
                    id: r.id.clone(),
                    value: r.value,
                    status: ScenarioStatus::Ok,
                    quantities: quantities(config, out),
                }
            }
            Err(f) => ScenarioReport {
                id: r.id.clone(),
                value: r.value,
                status: ScenarioStatus::Failed {
                    stage: f.stage,
                    message: f.message.clone(),
                },
                quantities: BTreeMap::new(),
            },
        };
        scenarios.push(report);
    }
    let mut provenance = BTreeMap::new();
    for p in [
        Provenance::Hmd,
        Provenance::Euro,
        Provenance::Statbel,
        Provenance::StmfDerived,
        Provenance::EurowDerived,
        Provenance::Virtual,
    ] {
        provenance.insert(p.label().to_string(), prepared.dataset.count_provenance(p));
    }
    let report = RunReport {
        country: config.country.clone(),
        method: config.method.name().to_string(),
        seed,
        config_sha256: config_sha256.to_string(),
        inputs: prepared
            .inputs
            .iter()
            .map(|(name, sha)| FileEntry {
                path: name.clone(),
                sha256: sha.clone(),
            })
            .collect(),
        provenance,
        warnings: prepared.warnings.clone(),
        auxiliary: prepared.auxiliary.clone(),
        scenarios,
        files: outputs.files,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let path = out_dir.join("report.json");
    std::fs::write(&path, json + "\n").map_err(|e| PipelineError::io(&path, e))?;
    let timings = serde_json::json!({
        "prepare_seconds": prepare_seconds,
        "scenarios": results.iter().map(|r| serde_json::json!({"id": r.id, "seconds": r.seconds})).collect::<Vec<_>>(),
    });
    let path = out_dir.join("timings.json");
    std::fs::write(&path, serde_json::to_string_pretty(&timings).expect("timings serialize") + "\n")
        .map_err(|e| PipelineError::io(&path, e))?;
    Ok(report)
}

/// Prepares the data, runs every scenario and writes all outputs. Scenario
/// failures are recorded in the report rather than returned as errors.
pub fn run_pipeline(config: &RunConfig, config_text: &str, options: &RunOptions) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    let prepared = prepare_data(config, options)?;
    let prepare_seconds = start.elapsed().as_secs_f64();
    log::info!(
        "data prepared in {prepare_seconds:.1}s; running {} scenarios",
        config.method.grid().len()
    );
    let results = run_scenarios(config, &prepared.dataset, options);
    let sha = hex::encode(Sha256::digest(config_text.as_bytes()));
    let seed = options.seed.unwrap_or(config.simulation.seed);
    write_outputs(config, &sha, seed, &options.output_dir(config), &prepared, &results, prepare_seconds)
}
