use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pipeline::{AuxiliarySummary, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScenarioStatus {
    Ok,
    Failed { stage: Stage, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub id: String,
    /// Grid value (final-year weight or blend weight).
    pub value: f64,
    #[serde(flatten)]
    pub status: ScenarioStatus,
    pub quantities: BTreeMap<String, f64>,
}

/// Machine-readable run summary. Contains nothing time- or path-dependent,
/// so reruns of the same configuration reproduce it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub country: String,
    pub method: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileEntry>,
    /// Dataset (cell, quantity) counts per provenance label.
    pub provenance: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
    pub auxiliary: Vec<AuxiliarySummary>,
    pub scenarios: Vec<ScenarioReport>,
    /// Output files relative to the output directory.
    pub files: Vec<FileEntry>,
}

impl RunReport {
    pub fn failed_scenarios(&self) -> usize {
        self.scenarios
            .iter()
            .filter(|s| matches!(s.status, ScenarioStatus::Failed { .. }))
            .count()
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("reports have {0} and {1} scenarios")]
    ScenarioCount(usize, usize),
    #[error("scenario {index}: status differs ({a} vs {b})")]
    Status { index: usize, a: String, b: String },
    #[error("scenario {index}: quantity `{name}` is missing from one report")]
    Quantity { index: usize, name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDiff {
    pub a: String,
    pub b: String,
    /// `b - a` for every quantity that differs.
    pub deltas: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportDiff {
    pub scenarios: Vec<ScenarioDiff>,
}

impl ReportDiff {
    pub fn is_empty(&self) -> bool {
        self.scenarios.iter().all(|s| s.deltas.is_empty())
    }
}

fn status_name(s: &ScenarioStatus) -> String {
    match s {
        ScenarioStatus::Ok => "ok".into(),
        ScenarioStatus::Failed { stage, .. } => format!("failed at {stage:?}"),
    }
}

/// Quantity deltas `b - a`, scenarios matched by position.
pub fn diff_reports(a: &RunReport, b: &RunReport) -> Result<ReportDiff, DiffError> {
    if a.scenarios.len() != b.scenarios.len() {
        return Err(DiffError::ScenarioCount(a.scenarios.len(), b.scenarios.len()));
    }
    let mut scenarios = Vec::new();
    for (index, (sa, sb)) in a.scenarios.iter().zip(&b.scenarios).enumerate() {
        if std::mem::discriminant(&sa.status) != std::mem::discriminant(&sb.status) {
            return Err(DiffError::Status {
                index,
                a: status_name(&sa.status),
                b: status_name(&sb.status),
            });
        }
        if let Some(name) = sa
            .quantities
            .keys()
            .find(|k| !sb.quantities.contains_key(*k))
            .or_else(|| sb.quantities.keys().find(|k| !sa.quantities.contains_key(*k)))
        {
            return Err(DiffError::Quantity {
                index,
                name: name.clone(),
            });
        }
        let deltas = sa
            .quantities
            .iter()
            .filter_map(|(k, va)| {
                let d = sb.quantities[k] - va;
                (d != 0.0).then(|| (k.clone(), d))
            })
            .collect();
        scenarios.push(ScenarioDiff {
            a: sa.id.clone(),
            b: sb.id.clone(),
            deltas,
        });
    }
    Ok(ReportDiff { scenarios })
}
