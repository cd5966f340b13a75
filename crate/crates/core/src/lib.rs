//! Multi-population stochastic mortality projection.
//!
//! The pipeline ingests individual-age and weekly bucketed data, ungroups
//! the bucketed years, calibrates a Li-Lee model by Poisson maximum
//! likelihood, fits the joint random-walk / AR(1) period-effect dynamics and
//! simulates fan charts of death probabilities and life expectancies.

pub mod data;
pub mod dynamics;
pub mod lilee;
pub mod projection;
pub mod scenario;
pub mod ungroup;

pub use data::{AgeRange, Country, Gender, MortalitySurface, MultiPopulationDataset, Provenance, YearRange};
pub use dynamics::{fit_weighted_mle, PeriodEffectSeries, TimeSeriesFit};
pub use lilee::{fit_adjusted_lee_miller, fit_li_lee, Calibration, FitOptions, LiLeeParams};
pub use projection::{fan_chart, simulate_period_effects, FanChart, ScenarioSpec, SimulationPaths};
pub use scenario::{run_pipeline, RunConfig, RunReport};
