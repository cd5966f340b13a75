use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cohort_life_expectancy, kannisto_close, mu_curve, period_life_expectancy, quantiles};
use super::{ProjectionError, SimulationPaths};
use crate::data::{Gender, MAX_AGE};
use crate::lilee::LiLeeParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FanQuantity {
    K,
    Kappa,
    Q,
    PeriodLifeExpectancy,
    CohortLifeExpectancy,
}

impl FanQuantity {
    pub const ALL: [FanQuantity; 5] = [
        FanQuantity::K,
        FanQuantity::Kappa,
        FanQuantity::Q,
        FanQuantity::PeriodLifeExpectancy,
        FanQuantity::CohortLifeExpectancy,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FanQuantity::K => "K",
            FanQuantity::Kappa => "kappa",
            FanQuantity::Q => "q",
            FanQuantity::PeriodLifeExpectancy => "e_per",
            FanQuantity::CohortLifeExpectancy => "e_coh",
        }
    }

    fn by_age(self) -> bool {
        !matches!(self, FanQuantity::K | FanQuantity::Kappa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Probe {
    Level(f64),
    /// Value along the zero-noise central path.
    Best,
}

impl Probe {
    pub fn label(self) -> String {
        match self {
            Probe::Level(p) => p.to_string(),
            Probe::Best => "best".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanConfig {
    pub probes: Vec<f64>,
    /// Ages reported for `q` and the life expectancies.
    pub ages: Vec<u32>,
    /// Last year reported for `K`, `kappa`, `q` and `e_per`; defaults to the horizon.
    pub last_year: Option<i32>,
}

impl Default for FanConfig {
    fn default() -> Self {
        FanConfig {
            probes: vec![0.005, 0.5, 0.995],
            ages: vec![0, 25, 45, 65, 85],
            last_year: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FanRow {
    pub quantity: FanQuantity,
    pub gender: Gender,
    pub age: Option<u32>,
    pub year: i32,
    pub probe: Probe,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FanChart {
    pub rows: Vec<FanRow>,
}

impl FanChart {
    pub fn value(&self, quantity: FanQuantity, gender: Gender, age: Option<u32>, year: i32, probe: Probe) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.quantity == quantity && r.gender == gender && r.age == age && r.year == year && r.probe == probe)
            .map(|r| r.value)
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    quantity: FanQuantity,
    gender: Gender,
    age: Option<u32>,
    year: i32,
}

fn plan(paths: &SimulationPaths, config: &FanConfig) -> Vec<Slot> {
    let last = config.last_year.unwrap_or(paths.horizon).min(paths.horizon);
    let mut ages = config.ages.clone();
    ages.sort_unstable();
    ages.dedup();
    let mut slots = Vec::new();
    for quantity in FanQuantity::ALL {
        for gender in Gender::BOTH {
            let age_list: Vec<Option<u32>> = if quantity.by_age() {
                ages.iter().map(|&a| Some(a)).collect()
            } else {
                vec![None]
            };
            for age in age_list {
                for year in paths.jump_off_year..=last {
                    if quantity == FanQuantity::CohortLifeExpectancy {
                        let needed = year + (MAX_AGE - age.unwrap()) as i32;
                        if needed > paths.horizon {
                            continue;
                        }
                    }
                    slots.push(Slot {
                        quantity,
                        gender,
                        age,
                        year,
                    });
                }
            }
        }
    }
    slots
}

/// Every slot value for one path.
fn evaluate(params: &LiLeeParams, paths: &SimulationPaths, path: usize, slots: &[Slot]) -> Result<Vec<f64>, ProjectionError> {
    let first_age = params.ages.min();
    let last_curve_year = slots
        .iter()
        .filter(|s| s.quantity.by_age())
        .map(|s| match s.quantity {
            FanQuantity::CohortLifeExpectancy => s.year + (MAX_AGE - s.age.unwrap()) as i32,
            _ => s.year,
        })
        .max()
        .unwrap_or(paths.jump_off_year);
    let mut curves: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for (g, gender) in Gender::BOTH.into_iter().enumerate() {
        for year in paths.jump_off_year..=last_curve_year {
            let (k, kappa) = paths.effects(path, year, gender);
            curves[g].push(kannisto_close(&mu_curve(params, gender, k, kappa)?, first_age)?.mu);
        }
    }
    slots
        .iter()
        .map(|s| {
            let g = usize::from(s.gender == Gender::Female);
            let j = (s.year - paths.jump_off_year) as usize;
            let (k, kappa) = paths.effects(path, s.year, s.gender);
            Ok(match s.quantity {
                FanQuantity::K => k,
                FanQuantity::Kappa => kappa,
                FanQuantity::Q => super::mortality_rate(curves[g][j][(s.age.unwrap() - first_age) as usize]),
                FanQuantity::PeriodLifeExpectancy => period_life_expectancy(&curves[g][j], first_age, s.age.unwrap()),
                FanQuantity::CohortLifeExpectancy => {
                    cohort_life_expectancy(&curves[g], paths.jump_off_year, first_age, s.age.unwrap(), s.year)?
                }
            })
        })
        .collect()
}

/// Quantiles across paths plus the central-path value for every reported
/// (quantity, gender, age, year), in output order.
pub fn fan_chart(
    params: &LiLeeParams,
    paths: &SimulationPaths,
    central: &SimulationPaths,
    config: &FanConfig,
) -> Result<FanChart, ProjectionError> {
    if paths.n_paths() < 2 {
        return Err(ProjectionError::TooFewValues(paths.n_paths()));
    }
    let mut probes = config.probes.clone();
    if let Some(&p) = probes.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(ProjectionError::Probe(p));
    }
    probes.sort_by(f64::total_cmp);
    probes.dedup();
    let slots = plan(paths, config);
    let per_path: Vec<Vec<f64>> = (0..paths.n_paths())
        .into_par_iter()
        .map(|i| evaluate(params, paths, i, &slots))
        .collect::<Result<_, _>>()?;
    let best = evaluate(params, central, 0, &slots)?;
    let summaries: Vec<Vec<f64>> = (0..slots.len())
        .into_par_iter()
        .map(|s| {
            let column: Vec<f64> = per_path.iter().map(|v| v[s]).collect();
            quantiles(&column, &probes)
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(slots.len() * (probes.len() + 1));
    for ((slot, qs), b) in slots.iter().zip(summaries).zip(best) {
        let mk = |probe, value| FanRow {
            quantity: slot.quantity,
            gender: slot.gender,
            age: slot.age,
            year: slot.year,
            probe,
            value,
        };
        rows.extend(probes.iter().zip(qs).map(|(&p, v)| mk(Probe::Level(p), v)));
        rows.push(mk(Probe::Best, b));
    }
    Ok(FanChart { rows })
}

/// `quantity,gender,age,year,probe,value`; the age is empty for period effects.
pub fn write_fan_chart<W: Write>(mut out: W, chart: &FanChart) -> std::io::Result<()> {
    writeln!(out, "quantity,gender,age,year,probe,value")?;
    for r in &chart.rows {
        let age = r.age.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{:.16e}",
            r.quantity.label(),
            r.gender.code(),
            age,
            r.year,
            r.probe.label(),
            r.value
        )?;
    }
    Ok(())
}
