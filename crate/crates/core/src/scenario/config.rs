use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::data::{AnnualShape, WeeklyShape, MAX_RECORDED_AGE};
use crate::projection::{FanConfig, KANNISTO_FIT_AGES};
use crate::ungroup::{DEFAULT_ALLOCATION_FEMALE, DEFAULT_ALLOCATION_MALE, DEFAULT_AUX_START_YEAR};

/// Declarative description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Country whose projection is produced.
    pub country: String,
    /// Countries whose pooled data define the common trend.
    pub common_pool: Vec<String>,
    /// Model ages `[first, last]`; the last must be 90.
    pub ages: [u32; 2],
    /// Calibration years `[first, last]`.
    pub years: [i32; 2],
    pub method: Method,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub fan: FanConfig,
    #[serde(default)]
    pub ungrouping: UngroupConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub files: BTreeMap<String, FileSpec>,
    pub sources: Vec<SourceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    /// One calibration; the final year's weight in the dynamics likelihood varies.
    WeightedLikelihood { weights: Vec<f64> },
    /// One anchored calibration per blend weight.
    AdjustedLeeMiller { alphas: Vec<f64> },
}

impl Method {
    pub fn grid(&self) -> &[f64] {
        match self {
            Method::WeightedLikelihood { weights } => weights,
            Method::AdjustedLeeMiller { alphas } => alphas,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::WeightedLikelihood { .. } => "weighted_likelihood",
            Method::AdjustedLeeMiller { .. } => "adjusted_lee_miller",
        }
    }

    pub fn scenario_id(&self, value: f64) -> String {
        match self {
            Method::WeightedLikelihood { .. } => format!("w_{value}"),
            Method::AdjustedLeeMiller { .. } => format!("alpha_{value}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_paths: usize,
    /// Final projection year; defaults to the jump-off year plus 120.
    #[serde(default)]
    pub horizon: Option<i32>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UngroupConfig {
    pub aux_start_year: i32,
    /// Years added to the start when the auxiliary AR(1) is not stationary.
    pub aux_retry_step: i32,
    pub allocation_male: f64,
    pub allocation_female: f64,
}

impl Default for UngroupConfig {
    fn default() -> Self {
        UngroupConfig {
            aux_start_year: DEFAULT_AUX_START_YEAR,
            aux_retry_step: 5,
            allocation_male: DEFAULT_ALLOCATION_MALE,
            allocation_female: DEFAULT_ALLOCATION_FEMALE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FileShape {
    Hmd,
    Euro,
    Statbel,
    Stmf,
    Eurow,
}

impl FileShape {
    pub fn annual(self) -> Option<AnnualShape> {
        match self {
            FileShape::Hmd => Some(AnnualShape::Hmd),
            FileShape::Euro => Some(AnnualShape::Euro),
            FileShape::Statbel => Some(AnnualShape::Statbel),
            _ => None,
        }
    }

    pub fn weekly(self) -> Option<WeeklyShape> {
        match self {
            FileShape::Stmf => Some(WeeklyShape::Stmf),
            FileShape::Eurow => Some(WeeklyShape::Eurow),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub path: PathBuf,
    pub shape: FileShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceQuantity {
    Deaths,
    Exposure,
    Both,
}

impl SourceQuantity {
    pub fn covers_deaths(self) -> bool {
        matches!(self, SourceQuantity::Deaths | SourceQuantity::Both)
    }

    pub fn covers_exposure(self) -> bool {
        matches!(self, SourceQuantity::Exposure | SourceQuantity::Both)
    }
}

/// Declares which file supplies a quantity for a country over a year span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub country: String,
    pub years: [i32; 2],
    pub quantity: SourceQuantity,
    pub file: String,
    /// Country codes in a weekly file summed into `country` (defaults to `country`).
    #[serde(default)]
    pub parts: Option<Vec<String>>,
    /// STMF file against which weekly Eurostat deaths must agree.
    #[serde(default)]
    pub check_with: Option<String>,
}

impl SourceSpec {
    pub fn parts(&self) -> Vec<String> {
        self.parts.clone().unwrap_or_else(|| vec![self.country.clone()])
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Every country that needs a surface: the pool plus the country of interest.
    pub fn countries(&self) -> Vec<String> {
        let mut all = self.common_pool.clone();
        if !all.contains(&self.country) {
            all.push(self.country.clone());
        }
        all
    }

    pub fn jump_off_year(&self) -> i32 {
        self.years[1]
    }

    pub fn horizon(&self) -> i32 {
        self.simulation
            .horizon
            .unwrap_or(self.jump_off_year() + (crate::data::MAX_AGE as i32))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let grid = self.method.grid();
        if grid.is_empty() {
            return invalid("scenario grid is empty".into());
        }
        if let Some(v) = grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("grid value {v} outside [0, 1]"));
        }
        let mut sorted = grid.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() != grid.len() {
            return invalid("grid contains duplicates".into());
        }
        if self.ages[0] > KANNISTO_FIT_AGES.0 || self.ages[1] != KANNISTO_FIT_AGES.1 {
            return invalid(format!(
                "ages must start at or below {} and end at {}",
                KANNISTO_FIT_AGES.0, KANNISTO_FIT_AGES.1
            ));
        }
        // Seven transitions for the dynamics need eight years.
        if self.years[1] - self.years[0] < 7 {
            return invalid("the calibration period needs at least eight years".into());
        }
        if self.common_pool.is_empty() {
            return invalid("common pool is empty".into());
        }
        if self.simulation.n_paths < 2 {
            return invalid("simulation needs at least two paths".into());
        }
        if self.horizon() <= self.jump_off_year() {
            return invalid("horizon must exceed the last calibration year".into());
        }
        if let Some(p) = self.fan.probes.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return invalid(format!("probe {p} outside [0, 1]"));
        }
        if let Some(a) = self.fan.ages.iter().find(|a| **a < self.ages[0] || **a > MAX_RECORDED_AGE) {
            return invalid(format!("report age {a} outside the model ages"));
        }
        for a in [self.ungrouping.allocation_male, self.ungrouping.allocation_female] {
            if !(a > 0.0 && a < 1.0) {
                return invalid(format!("allocation rate {a} outside (0, 1)"));
            }
        }
        self.validate_sources()
    }

    fn validate_sources(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for s in &self.sources {
            let Some(file) = self.files.get(&s.file) else {
                return invalid(format!("source for {} names unknown file `{}`", s.country, s.file));
            };
            if s.years[0] > s.years[1] {
                return invalid(format!("source for {} has reversed years", s.country));
            }
            match file.shape {
                FileShape::Eurow if s.quantity.covers_exposure() => {
                    return invalid(format!("EUROW file `{}` has no exposures", s.file));
                }
                shape if shape.annual().is_some() && (s.parts.is_some() || s.check_with.is_some()) => {
                    return invalid(format!("`parts`/`check_with` only apply to weekly files (`{}`)", s.file));
                }
                _ => {}
            }
            if file.shape.weekly().is_some() && self.ages[0] != 0 {
                return invalid(format!("weekly file `{}` needs model ages starting at 0", s.file));
            }
            if let Some(parts) = &s.parts {
                if parts.is_empty() {
                    return invalid(format!("empty `parts` for {}", s.country));
                }
            }
            if let Some(other) = &s.check_with {
                match self.files.get(other) {
                    Some(f) if f.shape == FileShape::Stmf && file.shape == FileShape::Eurow => {}
                    _ => return invalid(format!("`check_with` must pair an EUROW source with an STMF file (`{other}`)")),
                }
            }
        }
        // Exactly one declaration per (country, year, quantity) anywhere, and
        // full coverage of the calibration window.
        let mut seen: BTreeMap<(String, i32, bool), &str> = BTreeMap::new();
        for s in &self.sources {
            for year in s.years[0]..=s.years[1] {
                for deaths in [true, false] {
                    let covers = if deaths { s.quantity.covers_deaths() } else { s.quantity.covers_exposure() };
                    if !covers {
                        continue;
                    }
                    if let Some(prev) = seen.insert((s.country.clone(), year, deaths), &s.file) {
                        return Err(ConfigError::Ambiguous {
                            country: s.country.clone(),
                            year,
                            quantity: quantity_name(deaths),
                            files: [prev.to_string(), s.file.clone()],
                        });
                    }
                }
            }
        }
        for c in self.countries() {
            for year in self.years[0]..=self.years[1] {
                for deaths in [true, false] {
                    if !seen.contains_key(&(c.clone(), year, deaths)) {
                        return Err(ConfigError::Uncovered {
                            country: c.clone(),
                            year,
                            quantity: quantity_name(deaths),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Declared source for one (country, year, quantity).
    pub fn source_for(&self, country: &str, year: i32, deaths: bool) -> Option<&SourceSpec> {
        self.sources.iter().find(|s| {
            s.country == country
                && (s.years[0]..=s.years[1]).contains(&year)
                && if deaths { s.quantity.covers_deaths() } else { s.quantity.covers_exposure() }
        })
    }
}

fn quantity_name(deaths: bool) -> &'static str {
    if deaths {
        "deaths"
    } else {
        "exposure"
    }
}
