//! Batch orchestration: configuration, data preparation, scenario sweeps,
//! reports and synthetic fixtures.

mod config;
mod fixture;
mod pipeline;
mod report;

use thiserror::Error;

use crate::data::{DataError, Gender};
use crate::ungroup::UngroupError;

pub use config::{
    FileShape, FileSpec, Method, RunConfig, SimulationConfig, SourceQuantity, SourceSpec, UngroupConfig,
};
pub use fixture::{make_synthetic_fixture, Degradation, FixtureParams, FixtureTruth, PopulationTruth, Split};
pub use pipeline::{
    prepare_data, run_pipeline, run_scenarios, write_outputs, AuxiliarySummary, PreparedData, RunOptions,
    ScenarioFailure, ScenarioOutput, ScenarioResult, Stage,
};
pub use report::{diff_reports, DiffError, FileEntry, ReportDiff, RunReport, ScenarioDiff, ScenarioReport, ScenarioStatus};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("configuration syntax: {0}")]
    Syntax(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{country} {year} {quantity} is declared by both `{}` and `{}`", files[0], files[1])]
    Ambiguous {
        country: String,
        year: i32,
        quantity: &'static str,
        files: [String; 2],
    },
    #[error("no source declared for {country} {year} {quantity}")]
    Uncovered {
        country: String,
        year: i32,
        quantity: &'static str,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("ungrouping {country} {gender} {year}: {source}")]
    Ungroup {
        country: String,
        gender: Gender,
        year: i32,
        #[source]
        source: UngroupError,
    },
    #[error("auxiliary model for {country}: {source}")]
    Auxiliary {
        country: String,
        #[source]
        source: UngroupError,
    },
    #[error("no weekly series for {country} {gender} {year} in `{file}`")]
    MissingWeekly {
        country: String,
        gender: Gender,
        year: i32,
        file: String,
    },
    #[error("weekly Eurostat and STMF deaths disagree for {country} {gender} {year}: {detail}")]
    Inconsistent {
        country: String,
        gender: Gender,
        year: i32,
        detail: String,
    },
    #[error("{0}")]
    Missing(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
