//! Mortality data: domain types, ingestion of the individual-age and weekly
//! bucketed file shapes, and the weekly-to-annual conversion.

mod individual;
mod surface;
mod weekly;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use individual::{load_individual_age_csv, write_individual_age_csv, SurfaceFragment};
pub use surface::{AgeYearGrid, CellProvenance, MortalitySurface, MultiPopulationDataset};
pub use weekly::{
    aggregate_series, aggregate_uk, annualize_weekly_deaths, annualize_weekly_exposure,
    check_eurostat_stmf_consistency, derive_weekly_exposure, load_weekly_csv, write_weekly_csv,
    BucketMismatch, BucketedAnnualSeries, BucketedWeeklySeries, ConsistencyOutcome,
    ConsistencyTolerance, ExposureOrigin, Quantity, WeeklyCell, WEEKS_PER_YEAR,
};

/// Highest age accepted anywhere (closed curves run to this age).
pub const MAX_AGE: u32 = 120;
/// Upper age of the individual-age source files and of the open-bucket allocation.
pub const MAX_RECORDED_AGE: u32 = 110;
/// Upper bound on a plausible central death rate d/E.
pub const MAX_CENTRAL_RATE: f64 = 5.0;
/// Tolerance for `m * E = d` and for constant weekly exposures.
pub const WEEKLY_REL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid value: {0}")]
    Validation(String),
    #[error("unknown age bucket `{label}` for {shape} shape")]
    UnknownBucket { label: String, shape: String },
    #[error("duplicate row for bucket {bucket} week {week} ({context})")]
    DuplicateWeek {
        bucket: String,
        week: u32,
        context: String,
    },
    #[error("incomplete weekly series {context}: bucket {bucket} is missing weeks {missing:?}")]
    MissingWeeks {
        context: String,
        bucket: String,
        missing: Vec<u32>,
    },
    #[error("weekly exposure for {context} bucket {bucket} is not constant (week {week}: {value} vs {reference})")]
    NonConstantExposure {
        context: String,
        bucket: String,
        week: u32,
        value: f64,
        reference: f64,
    },
    #[error("death rate must be positive to derive an exposure, got {0}")]
    NonPositiveRate(f64),
    #[error("series structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("duplicate cell {country} {gender} age {age} year {year}")]
    DuplicateCell {
        country: String,
        gender: Gender,
        age: u32,
        year: i32,
    },
    #[error("missing {quantity} for {country} {gender} age {age} year {year}")]
    MissingCell {
        country: String,
        gender: Gender,
        quantity: &'static str,
        age: u32,
        year: i32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Gender {
    pub const BOTH: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Gender {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "M" | "m" => Ok(Gender::Male),
            "F" | "f" => Ok(Gender::Female),
            other => Err(DataError::Validation(format!("unknown gender `{other}`"))),
        }
    }
}

/// Country code as it appears in the source files (e.g. `BEL`, `UNK`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Country(String);

impl Country {
    pub fn new(code: impl Into<String>) -> Self {
        Country(code.into().trim().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Country {
    fn from(s: &str) -> Self {
        Country::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgeRange {
    min: u32,
    max: u32,
}

impl AgeRange {
    pub fn new(min: u32, max: u32) -> Result<Self, DataError> {
        if min > max || max > MAX_AGE {
            return Err(DataError::Validation(format!(
                "age range {min}..={max} must satisfy 0 <= min <= max <= {MAX_AGE}"
            )));
        }
        Ok(AgeRange { min, max })
    }

    pub fn min(&self) -> u32 {
        self.min
    }

    pub fn max(&self) -> u32 {
        self.max
    }

    pub fn len(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, age: u32) -> bool {
        (self.min..=self.max).contains(&age)
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> {
        self.min..=self.max
    }

    pub fn index(&self, age: u32) -> Option<usize> {
        self.contains(age).then(|| (age - self.min) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct YearRange {
    first: i32,
    last: i32,
}

impl YearRange {
    pub fn new(first: i32, last: i32) -> Result<Self, DataError> {
        if first > last {
            return Err(DataError::Validation(format!(
                "year range {first}..={last} is empty"
            )));
        }
        Ok(YearRange { first, last })
    }

    pub fn first(&self) -> i32 {
        self.first
    }

    pub fn last(&self) -> i32 {
        self.last
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.first..=self.last).contains(&year)
    }

    pub fn iter(&self) -> impl Iterator<Item = i32> {
        self.first..=self.last
    }

    pub fn index(&self, year: i32) -> Option<usize> {
        self.contains(year).then(|| (year - self.first) as usize)
    }
}

/// Age interval `[lower, upper]`, or `lower+` when open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgeBucket {
    pub lower: u32,
    pub upper: Option<u32>,
}

impl AgeBucket {
    pub fn closed(lower: u32, upper: u32) -> Self {
        assert!(lower <= upper, "bucket [{lower},{upper}] is inverted");
        AgeBucket {
            lower,
            upper: Some(upper),
        }
    }

    pub fn open(lower: u32) -> Self {
        AgeBucket { lower, upper: None }
    }

    pub fn is_open(&self) -> bool {
        self.upper.is_none()
    }

    pub fn contains(&self, age: u32) -> bool {
        age >= self.lower && self.upper.is_none_or(|u| age <= u)
    }

    /// Label in the file notation: `0-14` or `85+`.
    pub fn label(&self) -> String {
        match self.upper {
            Some(u) => format!("{}-{}", self.lower, u),
            None => format!("{}+", self.lower),
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        let label = label.trim();
        if let Some(lower) = label.strip_suffix('+') {
            return lower.parse().ok().map(AgeBucket::open);
        }
        let (lo, hi) = label.split_once('-')?;
        let lo: u32 = lo.trim().parse().ok()?;
        let hi: u32 = hi.trim().parse().ok()?;
        (lo <= hi).then(|| AgeBucket::closed(lo, hi))
    }
}

impl fmt::Display for AgeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Checks that `buckets` are sorted, contiguous from age 0 and that only the
/// last one may be open.
pub fn validate_partition(buckets: &[AgeBucket]) -> Result<(), DataError> {
    let mut next = 0u32;
    for (i, b) in buckets.iter().enumerate() {
        if b.lower != next {
            return Err(DataError::StructureMismatch(format!(
                "bucket {b} does not start at age {next}"
            )));
        }
        match b.upper {
            Some(u) => next = u + 1,
            None if i + 1 == buckets.len() => return Ok(()),
            None => {
                return Err(DataError::StructureMismatch(format!(
                    "open bucket {b} is not the last bucket"
                )))
            }
        }
    }
    Ok(())
}

/// Shapes of the annual individual-age sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnnualShape {
    Hmd,
    Euro,
    Statbel,
}

impl AnnualShape {
    pub fn provenance(self) -> Provenance {
        match self {
            AnnualShape::Hmd => Provenance::Hmd,
            AnnualShape::Euro => Provenance::Euro,
            AnnualShape::Statbel => Provenance::Statbel,
        }
    }
}

/// Shapes of the weekly bucketed sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WeeklyShape {
    Stmf,
    Eurow,
}

impl WeeklyShape {
    /// The fixed bucket partition each source publishes.
    pub fn buckets(self) -> Vec<AgeBucket> {
        match self {
            WeeklyShape::Stmf => vec![
                AgeBucket::closed(0, 14),
                AgeBucket::closed(15, 64),
                AgeBucket::closed(65, 74),
                AgeBucket::closed(75, 84),
                AgeBucket::open(85),
            ],
            WeeklyShape::Eurow => {
                let mut v: Vec<_> = (0..18).map(|i| AgeBucket::closed(5 * i, 5 * i + 4)).collect();
                v.push(AgeBucket::open(90));
                v
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeeklyShape::Stmf => "STMF",
            WeeklyShape::Eurow => "EUROW",
        }
    }

    pub fn derived_provenance(self) -> Provenance {
        match self {
            WeeklyShape::Stmf => Provenance::StmfDerived,
            WeeklyShape::Eurow => Provenance::EurowDerived,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Hmd,
    Euro,
    Statbel,
    StmfDerived,
    EurowDerived,
    Virtual,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Hmd => "HMD",
            Provenance::Euro => "EURO",
            Provenance::Statbel => "STATBEL",
            Provenance::StmfDerived => "STMF_DERIVED",
            Provenance::EurowDerived => "EUROW_DERIVED",
            Provenance::Virtual => "VIRTUAL",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Provenance {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "HMD" => Provenance::Hmd,
            "EURO" => Provenance::Euro,
            "STATBEL" => Provenance::Statbel,
            "STMF_DERIVED" => Provenance::StmfDerived,
            "EUROW_DERIVED" => Provenance::EurowDerived,
            "VIRTUAL" => Provenance::Virtual,
            other => return Err(DataError::Validation(format!("unknown provenance `{other}`"))),
        })
    }
}
