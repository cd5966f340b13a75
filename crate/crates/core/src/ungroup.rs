//! Virtual individual-age exposures and deaths from annual bucket totals.
//!
//! A reference-shaped curve (last year's exposures shifted one age, or the
//! deaths expected under an auxiliary projection model) is scaled bucket by
//! bucket so that every closed bucket reproduces its observed total. Open top
//! buckets get dedicated rules.

use serde::Serialize;
use thiserror::Error;

use crate::data::{AgeBucket, BucketedAnnualSeries, Country, DataError, Gender, MultiPopulationDataset, YearRange};
use crate::data::{MAX_AGE, MAX_RECORDED_AGE};
use crate::dynamics::{build_design, fit_weighted_mle, DynamicsError, PeriodEffectSeries, TimeSeriesFit};
use crate::lilee::{fit_li_lee, Calibration, FitOptions, LiLeeError};
use crate::projection::{central_path, kannisto_close, mu_curve, ProjectionError, ScenarioSpec};

/// Share of the open 90+ deaths allocated to age 90.
pub const DEFAULT_ALLOCATION_MALE: f64 = 0.2;
pub const DEFAULT_ALLOCATION_FEMALE: f64 = 0.145;
/// Default first calibration year of the auxiliary model.
pub const DEFAULT_AUX_START_YEAR: i32 = 1970;

#[derive(Debug, Error)]
pub enum UngroupError {
    #[error("extrapolated exposure at age 0 is {0}; refusing to clamp")]
    DegenerateCurve(f64),
    #[error("curve is not strictly positive at age {age} ({value})")]
    NonPositiveCurve { age: u32, value: f64 },
    #[error("bucket {bucket} has total {total} but no curve mass")]
    Unscalable { bucket: String, total: f64 },
    #[error("bucket {0} extends beyond the curve")]
    BucketOutOfRange(String),
    #[error("open-bucket shift makes the exposure at age {age} non-positive ({value})")]
    NonPositiveExposure { age: u32, value: f64 },
    #[error("the open bucket {0} needs individual-age deaths of a reference year")]
    MissingReference(String),
    #[error("allocation rate {0} outside (0, 1)")]
    Allocation(f64),
    #[error("expected {expected:?} totals, got {got:?}")]
    WrongQuantity {
        expected: crate::data::Quantity,
        got: crate::data::Quantity,
    },
    #[error("auxiliary model: {0}")]
    Model(#[from] LiLeeError),
    #[error("auxiliary model dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("auxiliary projection: {0}")]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedExposureCurve {
    pub source_year: i32,
    /// Ages `0..len`: `values[x] = prev[x - 1]`, age 0 linearly extrapolated.
    pub values: Vec<f64>,
}

/// Moves last year's exposures one age up and extrapolates age 0 as `2 E_0 - E_1`.
pub fn shift_exposure_curve(prev: &[f64], source_year: i32) -> Result<ShiftedExposureCurve, UngroupError> {
    for (age, &v) in prev.iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(UngroupError::NonPositiveCurve { age: age as u32, value: v });
        }
    }
    if prev.len() < 2 {
        return Err(UngroupError::DegenerateCurve(f64::NAN));
    }
    let age0 = 2.0 * prev[0] - prev[1];
    if !(age0 > 0.0) {
        return Err(UngroupError::DegenerateCurve(age0));
    }
    let mut values = Vec::with_capacity(prev.len());
    values.push(age0);
    values.extend_from_slice(&prev[..prev.len() - 1]);
    Ok(ShiftedExposureCurve { source_year, values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketScaleFactors {
    /// `(bucket label, total / curve mass)` per closed bucket.
    pub factors: Vec<(String, f64)>,
}

/// Scales the curve (indexed by age from 0) within each closed bucket so its
/// sum equals the bucket total. Ages outside the buckets pass through.
pub fn scale_curve_to_buckets(
    curve: &[f64],
    buckets: &[(AgeBucket, f64)],
) -> Result<(Vec<f64>, BucketScaleFactors), UngroupError> {
    let mut out = curve.to_vec();
    let mut factors = Vec::with_capacity(buckets.len());
    for &(bucket, total) in buckets {
        let upper = bucket.upper.expect("closed buckets only");
        if upper as usize >= curve.len() {
            return Err(UngroupError::BucketOutOfRange(bucket.label()));
        }
        let section = &curve[bucket.lower as usize..=upper as usize];
        for (offset, &v) in section.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(UngroupError::NonPositiveCurve {
                    age: bucket.lower + offset as u32,
                    value: v,
                });
            }
        }
        let mass: f64 = section.iter().sum();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(UngroupError::Unscalable {
                bucket: bucket.label(),
                total,
            });
        }
        let b = total / mass;
        if section.len() == 1 {
            out[bucket.lower as usize] = total;
        } else {
            for age in bucket.lower..=upper {
                out[age as usize] = curve[age as usize] * b;
            }
        }
        factors.push((bucket.label(), b));
    }
    Ok((out, BucketScaleFactors { factors }))
}

/// Ages `lower..prev.len()` of last year's curve, each shifted by
/// `(open_total - open_total_prev) / (110 - lower + 1)`.
pub fn apply_open_bucket_exposure(
    prev: &[f64],
    lower: u32,
    open_total: f64,
    open_total_prev: f64,
) -> Result<Vec<f64>, UngroupError> {
    let shift = (open_total - open_total_prev) / f64::from(MAX_RECORDED_AGE - lower + 1);
    prev[lower as usize..]
        .iter()
        .enumerate()
        .map(|(offset, &v)| {
            let value = v + shift;
            if value > 0.0 {
                Ok(value)
            } else {
                Err(UngroupError::NonPositiveExposure {
                    age: lower + offset as u32,
                    value,
                })
            }
        })
        .collect()
}

/// Ungrouped values for one (country, gender, year).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UngroupedCurve {
    pub year: i32,
    /// Individual-age values from age 0.
    pub values: Vec<f64>,
    pub factors: BucketScaleFactors,
    pub warnings: Vec<String>,
}

fn closed_buckets(series: &BucketedAnnualSeries) -> Vec<(AgeBucket, f64)> {
    series.iter().filter(|(b, _)| !b.is_open()).collect()
}

fn expect_quantity(series: &BucketedAnnualSeries, q: crate::data::Quantity) -> Result<(), UngroupError> {
    if series.quantity != q {
        return Err(UngroupError::WrongQuantity {
            expected: q,
            got: series.quantity,
        });
    }
    Ok(())
}

/// Year `t` exposures from the year `t - 1` curve `prev` (ages from 0):
/// shift, scale the closed buckets, then shift the open bucket uniformly.
/// The result has the same length as `prev`.
pub fn ungroup_exposures(
    prev: &[f64],
    source_year: i32,
    buckets: &BucketedAnnualSeries,
) -> Result<UngroupedCurve, UngroupError> {
    expect_quantity(buckets, crate::data::Quantity::Exposure)?;
    let shifted = shift_exposure_curve(prev, source_year)?;
    let (mut values, factors) = scale_curve_to_buckets(&shifted.values, &closed_buckets(buckets))?;
    let mut warnings = Vec::new();
    if let Some((bucket, total)) = buckets.open_bucket() {
        let lower = bucket.lower as usize;
        if lower >= prev.len() {
            return Err(UngroupError::BucketOutOfRange(bucket.label()));
        }
        if prev.len() <= MAX_RECORDED_AGE as usize {
            let msg = format!(
                "previous exposures stop at age {}; open bucket {} is conserved only up to that age",
                prev.len() - 1,
                bucket.label()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let prev_total: f64 = prev[lower..].iter().sum();
        let open = apply_open_bucket_exposure(prev, bucket.lower, total, prev_total)?;
        values[lower..].copy_from_slice(&open);
    }
    Ok(UngroupedCurve {
        year: source_year + 1,
        values,
        factors,
        warnings,
    })
}

/// `d = mu * E` per age.
pub fn expected_deaths(mu: &[f64], exposures: &[f64]) -> Vec<f64> {
    mu.iter().zip(exposures).map(|(m, e)| m * e).collect()
}

pub fn default_allocation(gender: Gender) -> f64 {
    match gender {
        Gender::Male => DEFAULT_ALLOCATION_MALE,
        Gender::Female => DEFAULT_ALLOCATION_FEMALE,
    }
}

/// Deaths at the lower age of an open bucket:
/// `d_ref(lower) + A (open_total - sum_{a >= lower} d_ref(a))`, floored at zero.
/// Returns the value and whether the floor applied.
pub fn apply_open_bucket_deaths(
    ref_at_lower: f64,
    ref_open_sum: f64,
    open_total: f64,
    allocation: f64,
) -> Result<(f64, bool), UngroupError> {
    if !(allocation > 0.0 && allocation < 1.0) {
        return Err(UngroupError::Allocation(allocation));
    }
    let value = ref_at_lower + allocation * (open_total - ref_open_sum);
    if value < 0.0 {
        log::warn!("open-bucket death allocation {value} floored at zero");
        return Ok((0.0, true));
    }
    Ok((value, false))
}

/// Reference-year inputs for an open bucket whose lower age is the top model age.
#[derive(Debug, Clone, Copy)]
pub struct DeathReference<'a> {
    pub year: i32,
    /// Individual-age deaths of the reference year from age 0 (through 110 if known).
    pub deaths: &'a [f64],
    pub allocation: f64,
}

/// Year-`t` deaths over the model ages `0..expected.len()`.
///
/// Closed buckets scale the expected curve. An open bucket starting at the
/// top model age uses the allocation rule with `reference`; one starting
/// below it scales those ages jointly against the open total minus
/// `expected_tail` (expected deaths above the top model age).
pub fn ungroup_deaths(
    expected: &[f64],
    year: i32,
    buckets: &BucketedAnnualSeries,
    reference: Option<DeathReference<'_>>,
    expected_tail: f64,
) -> Result<UngroupedCurve, UngroupError> {
    expect_quantity(buckets, crate::data::Quantity::Deaths)?;
    let top = expected.len() as u32 - 1;
    let closed: Vec<_> = closed_buckets(buckets)
        .into_iter()
        .filter(|(b, _)| b.lower <= top)
        .collect();
    let (mut values, mut factors) = scale_curve_to_buckets(expected, &closed)?;
    let mut warnings = Vec::new();
    if let Some((bucket, total)) = buckets.open_bucket() {
        if bucket.lower == top {
            let r = reference.ok_or_else(|| UngroupError::MissingReference(bucket.label()))?;
            if r.deaths.len() <= top as usize {
                return Err(UngroupError::MissingReference(bucket.label()));
            }
            let ref_sum: f64 = r.deaths[top as usize..].iter().sum();
            let (v, floored) = apply_open_bucket_deaths(r.deaths[top as usize], ref_sum, total, r.allocation)?;
            if floored {
                warnings.push(format!("{year} age {top}: open-bucket allocation floored at zero"));
            }
            values[top as usize] = v;
        } else if bucket.lower < top {
            let section = AgeBucket::closed(bucket.lower, top);
            let mass: f64 = expected[bucket.lower as usize..].iter().sum();
            let mut target = total - expected_tail;
            if !(target > 0.0) {
                target = total * mass / (mass + expected_tail);
                let msg = format!(
                    "{year}: expected deaths above age {top} ({expected_tail}) exceed the {} total {total}; using the proportional share {target}",
                    bucket.label()
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            let (scaled, f) = scale_curve_to_buckets(expected, &[(section, target)])?;
            values[bucket.lower as usize..].copy_from_slice(&scaled[bucket.lower as usize..]);
            factors.factors.extend(f.factors);
        }
    }
    Ok(UngroupedCurve {
        year,
        values,
        factors,
        warnings,
    })
}

/// Model calibrated on observed individual-age years only, used to project
/// the shape of the deaths curve into the bucketed years.
#[derive(Debug, Clone)]
pub struct AuxiliaryModel {
    pub country: Country,
    pub years: YearRange,
    pub calibration: Calibration,
    pub dynamics: TimeSeriesFit,
}

impl AuxiliaryModel {
    /// Zero-noise projected forces of mortality over the model ages.
    pub fn central_mu(&self, gender: Gender, year: i32) -> Result<Vec<f64>, UngroupError> {
        let params = &self.calibration.params;
        if let Some(j) = self.years.index(year) {
            let p = params.population(gender).ok_or(ProjectionError::MissingGender(gender))?;
            return Ok(mu_curve(params, gender, p.k[j], p.kappa[j])?);
        }
        let series = PeriodEffectSeries::from_params(params)?;
        let spec = ScenarioSpec {
            jump_off_year: self.years.last(),
            horizon: year,
            n_paths: 1,
            seed: 0,
            jump_off: series.jump_off(),
        };
        let path = central_path(&self.dynamics, &spec)?;
        let (k, kappa) = path.effects(0, year, gender);
        Ok(mu_curve(params, gender, k, kappa)?)
    }

    /// Central forces of mortality closed through age 120.
    pub fn central_closed_mu(&self, gender: Gender, year: i32) -> Result<Vec<f64>, UngroupError> {
        let mu = self.central_mu(gender, year)?;
        Ok(kannisto_close(&mu, self.calibration.params.ages.min())?.mu)
    }

    pub fn is_stable(&self) -> bool {
        Gender::BOTH.iter().all(|&g| self.dynamics.is_stationary(g))
    }
}

/// Li–Lee fit plus unit-weight dynamics on the dataset's years from `start_year`.
pub fn fit_auxiliary_projection_model(
    dataset: &MultiPopulationDataset,
    country: &Country,
    start_year: i32,
    opts: &FitOptions,
) -> Result<AuxiliaryModel, UngroupError> {
    let first = start_year.max(dataset.years().first());
    let years = YearRange::new(first, dataset.years().last())?;
    let restricted = dataset
        .restrict_years(years)
        .ok_or_else(|| DataError::Validation(format!("no data for years {first}..={}", years.last())))?;
    let calibration = fit_li_lee(&restricted, country, opts)?;
    let series = PeriodEffectSeries::from_params(&calibration.params)?;
    let rows = build_design(&series);
    let dynamics = fit_weighted_mle(&rows, &vec![1.0; rows.len()])?;
    let model = AuxiliaryModel {
        country: country.clone(),
        years,
        calibration,
        dynamics,
    };
    if !model.is_stable() {
        log::warn!(
            "auxiliary model for {country} from {first}: non-stationary AR(1) (phi_M {}, phi_F {})",
            model.dynamics.phi(Gender::Male),
            model.dynamics.phi(Gender::Female)
        );
    }
    Ok(model)
}

/// Tries `start_year`, then later starts in steps of `step` years, until both
/// country AR(1) processes are stationary. Falls back to the last successful
/// fit when none is.
pub fn fit_stable_auxiliary_model(
    dataset: &MultiPopulationDataset,
    country: &Country,
    start_year: i32,
    step: i32,
    opts: &FitOptions,
) -> Result<AuxiliaryModel, UngroupError> {
    let last = dataset.years().last();
    let mut start = start_year.max(dataset.years().first());
    let mut fallback = None;
    let mut first_err = None;
    // Eight years give the seven transitions the dynamics need.
    while last - start >= 7 {
        match fit_auxiliary_projection_model(dataset, country, start, opts) {
            Ok(m) if m.is_stable() => return Ok(m),
            Ok(m) => fallback = Some(m),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
        start += step.max(1);
    }
    match (fallback, first_err) {
        (Some(m), _) => Ok(m),
        (None, Some(e)) => Err(e),
        (None, None) => fit_auxiliary_projection_model(dataset, country, start_year, opts),
    }
}

/// Expected deaths above the top model age in `year`: the closed central
/// forces of mortality times the supplied exposures for those ages.
pub fn expected_tail_deaths(closed_mu: &[f64], exposures: &[f64], top_model_age: u32) -> f64 {
    let from = top_model_age as usize + 1;
    let to = exposures.len().min(closed_mu.len()).min(MAX_AGE as usize + 1);
    (from..to).map(|a| closed_mu[a] * exposures[a]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Quantity;
    use proptest::prelude::*;

    fn series(quantity: Quantity, buckets: Vec<AgeBucket>, values: Vec<f64>) -> BucketedAnnualSeries {
        BucketedAnnualSeries::new("XX".into(), Gender::Male, 2020, quantity, buckets, values).unwrap()
    }

    #[test]
    fn shift_examples() {
        let s = shift_exposure_curve(&[10.0, 12.0, 14.0, 16.0], 2019).unwrap();
        assert_eq!(s.values, vec![8.0, 10.0, 12.0, 14.0]);
        let c = shift_exposure_curve(&[5.0; 6], 2019).unwrap();
        assert_eq!(c.values, vec![5.0; 6]);
        assert!(matches!(
            shift_exposure_curve(&[1.0, 3.0, 4.0], 2019),
            Err(UngroupError::DegenerateCurve(v)) if v == -1.0
        ));
    }

    #[test]
    fn scale_examples() {
        let (out, f) = scale_curve_to_buckets(&[1.0, 1.0, 2.0], &[(AgeBucket::closed(0, 2), 8.0)]).unwrap();
        assert_eq!(out, vec![2.0, 2.0, 4.0]);
        assert_eq!(f.factors, vec![("0-2".to_string(), 2.0)]);
        let (out, _) = scale_curve_to_buckets(&[1.0, 3.0, 2.0], &[(AgeBucket::closed(0, 2), 6.0)]).unwrap();
        assert_eq!(out, vec![1.0, 3.0, 2.0]);
        assert!(matches!(
            scale_curve_to_buckets(&[1.0, 0.0, 2.0], &[(AgeBucket::closed(0, 2), 6.0)]),
            Err(UngroupError::NonPositiveCurve { age: 1, .. })
        ));
        assert!(scale_curve_to_buckets(&[1.0, 1.0], &[(AgeBucket::closed(0, 2), 6.0)]).is_err());
    }

    #[test]
    fn open_exposure_examples() {
        let prev = vec![100.0; 111];
        assert_eq!(apply_open_bucket_exposure(&prev, 85, 2600.0, 2600.0).unwrap(), vec![100.0; 26]);
        assert_eq!(apply_open_bucket_exposure(&prev, 85, 2626.0, 2600.0).unwrap(), vec![101.0; 26]);
        assert!(matches!(
            apply_open_bucket_exposure(&prev, 85, 0.0, 2600.0),
            Err(UngroupError::NonPositiveExposure { age: 85, .. })
        ));
    }

    #[test]
    fn ungroup_exposures_single_closed_bucket_matches_direct_scaling() {
        let prev: Vec<f64> = (0..=110).map(|x| 1000.0 + 10.0 * x as f64 - 0.08 * (x * x) as f64).collect();
        let open_prev: f64 = prev[85..].iter().sum();
        let b = series(
            Quantity::Exposure,
            vec![AgeBucket::closed(0, 84), AgeBucket::open(85)],
            vec![90_000.0, open_prev + 260.0],
        );
        let out = ungroup_exposures(&prev, 2019, &b).unwrap();
        let shifted = shift_exposure_curve(&prev, 2019).unwrap();
        let (direct, _) = scale_curve_to_buckets(&shifted.values, &[(AgeBucket::closed(0, 84), 90_000.0)]).unwrap();
        assert_eq!(&out.values[..85], &direct[..85]);
        for x in 85..=110 {
            assert!((out.values[x] - (prev[x] + 10.0)).abs() < 1e-9);
        }
        let open_sum: f64 = out.values[85..].iter().sum();
        assert!((open_sum - (open_prev + 260.0)).abs() < 1e-9 * open_sum);
        assert_eq!(out.year, 2020);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn chained_exposures_match_both_years() {
        let prev: Vec<f64> = (0..=110).map(|x| 5000.0 - 40.0 * x as f64 + 300.0 * (x as f64 / 9.0).sin()).map(|v| v.max(50.0)).collect();
        let buckets = vec![
            AgeBucket::closed(0, 14),
            AgeBucket::closed(15, 64),
            AgeBucket::closed(65, 74),
            AgeBucket::closed(75, 84),
            AgeBucket::open(85),
        ];
        let open_prev: f64 = prev[85..].iter().sum();
        let totals1 = vec![60_000.0, 190_000.0, 18_000.0, 9_000.0, open_prev + 500.0];
        let totals2 = vec![59_000.0, 191_000.0, 18_500.0, 9_300.0, open_prev - 300.0];
        let y1 = ungroup_exposures(&prev, 2018, &series(Quantity::Exposure, buckets.clone(), totals1.clone())).unwrap();
        let y2 = ungroup_exposures(&y1.values, 2019, &series(Quantity::Exposure, buckets.clone(), totals2.clone())).unwrap();
        for (curve, totals) in [(&y1.values, &totals1), (&y2.values, &totals2)] {
            for (b, t) in buckets.iter().zip(totals.iter()) {
                let hi = b.upper.unwrap_or(110) as usize;
                let s: f64 = curve[b.lower as usize..=hi].iter().sum();
                assert!((s - t).abs() <= 1e-9 * t, "{b}: {s} vs {t}");
            }
        }
    }

    #[test]
    fn open_death_examples() {
        assert_eq!(apply_open_bucket_deaths(50.0, 300.0, 300.0, 0.2).unwrap(), (50.0, false));
        let (v, _) = apply_open_bucket_deaths(50.0, 300.0, 400.0, DEFAULT_ALLOCATION_MALE).unwrap();
        assert!((v - 70.0).abs() < 1e-12);
        let (v, _) = apply_open_bucket_deaths(50.0, 300.0, 500.0, DEFAULT_ALLOCATION_FEMALE).unwrap();
        assert!((v - 79.0).abs() < 1e-12);
        assert_eq!(apply_open_bucket_deaths(1.0, 300.0, 0.0, 0.2).unwrap(), (0.0, true));
        assert!(apply_open_bucket_deaths(1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn expected_death_examples() {
        assert_eq!(expected_deaths(&[0.01, 0.0], &[1000.0, 5.0]), vec![10.0, 0.0]);
    }

    fn eurow_like(total_per_bucket: f64) -> (Vec<AgeBucket>, Vec<f64>) {
        let mut b: Vec<AgeBucket> = (0..18).map(|i| AgeBucket::closed(5 * i, 5 * i + 4)).collect();
        b.push(AgeBucket::open(90));
        let v = vec![total_per_bucket; 19];
        (b, v)
    }

    #[test]
    fn deaths_with_90_plus_bucket() {
        let expected: Vec<f64> = (0..=90).map(|x| 1.0 + x as f64).collect();
        let (b, mut v) = eurow_like(100.0);
        v[18] = 300.0;
        let s = series(Quantity::Deaths, b.clone(), v);
        let reference: Vec<f64> = (0..=110).map(|x| if x >= 90 { 10.0 } else { 1.0 }).collect();
        let out = ungroup_deaths(
            &expected,
            2020,
            &s,
            Some(DeathReference {
                year: 2018,
                deaths: &reference,
                allocation: 0.2,
            }),
            0.0,
        )
        .unwrap();
        for bucket in &b[..18] {
            let sum: f64 = out.values[bucket.lower as usize..=bucket.upper.unwrap() as usize].iter().sum();
            assert!((sum - 100.0).abs() < 1e-9 * 100.0);
        }
        assert!((out.values[90] - (10.0 + 0.2 * (300.0 - 210.0))).abs() < 1e-12);
        assert!(ungroup_deaths(&expected, 2020, &s, None, 0.0).is_err());
    }

    #[test]
    fn deaths_with_85_plus_bucket_subtract_tail() {
        let expected: Vec<f64> = (0..=90).map(|x| 1.0 + x as f64).collect();
        let buckets = vec![
            AgeBucket::closed(0, 14),
            AgeBucket::closed(15, 64),
            AgeBucket::closed(65, 74),
            AgeBucket::closed(75, 84),
            AgeBucket::open(85),
        ];
        let s = series(Quantity::Deaths, buckets.clone(), vec![10.0, 100.0, 300.0, 500.0, 1000.0]);
        let out = ungroup_deaths(&expected, 2020, &s, None, 400.0).unwrap();
        let top: f64 = out.values[85..].iter().sum();
        assert!((top - 600.0).abs() < 1e-9 * 600.0);
        for x in 86..=90 {
            assert!((out.values[x] / out.values[85] - expected[x] / expected[85]).abs() < 1e-12);
        }
        let out = ungroup_deaths(&expected, 2020, &s, None, 5000.0).unwrap();
        assert_eq!(out.warnings.len(), 1);
        let mass: f64 = expected[85..].iter().sum();
        let top: f64 = out.values[85..].iter().sum();
        assert!((top - 1000.0 * mass / (mass + 5000.0)).abs() < 1e-9 * top);
    }

    #[test]
    fn uniform_expected_curve_stays_uniform() {
        let expected = vec![3.0; 91];
        let (b, v) = eurow_like(50.0);
        let s = series(Quantity::Deaths, b, v);
        let reference = vec![1.0; 111];
        let out = ungroup_deaths(
            &expected,
            2020,
            &s,
            Some(DeathReference {
                year: 2019,
                deaths: &reference,
                allocation: 0.2,
            }),
            0.0,
        )
        .unwrap();
        assert!(out.values[..90].iter().all(|&v| (v - 10.0).abs() < 1e-12));
    }

    fn partition() -> impl Strategy<Value = (Vec<f64>, Vec<(AgeBucket, f64)>)> {
        (5usize..60)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec(0.01f64..1e6, n),
                    prop::collection::vec(any::<bool>(), n - 1),
                    prop::collection::vec(0.1f64..1e7, n),
                )
            })
            .prop_map(|(curve, cuts, totals)| {
                let mut buckets = Vec::new();
                let mut lo = 0u32;
                for (i, cut) in cuts.iter().enumerate() {
                    if *cut {
                        buckets.push((AgeBucket::closed(lo, i as u32), totals[i]));
                        lo = i as u32 + 1;
                    }
                }
                let hi = curve.len() as u32 - 1;
                buckets.push((AgeBucket::closed(lo, hi), totals[hi as usize]));
                (curve, buckets)
            })
    }

    proptest! {
        #[test]
        fn scaling_conserves_and_preserves_shape((curve, buckets) in partition()) {
            let (out, f) = scale_curve_to_buckets(&curve, &buckets).unwrap();
            for (b, total) in &buckets {
                let (lo, hi) = (b.lower as usize, b.upper.unwrap() as usize);
                let s: f64 = out[lo..=hi].iter().sum();
                prop_assert!((s - total).abs() <= 1e-9 * total);
                if lo == hi {
                    prop_assert_eq!(out[lo], *total);
                }
                for a in lo..=hi {
                    prop_assert!((out[a] / out[lo] - curve[a] / curve[lo]).abs() <= 1e-12 * (curve[a] / curve[lo]).max(1.0));
                }
            }
            prop_assert!(f.factors.iter().all(|(_, b)| *b > 0.0 && b.is_finite()));
            let (_, again) = scale_curve_to_buckets(&out, &buckets).unwrap();
            prop_assert!(again.factors.iter().all(|(_, b)| (b - 1.0).abs() < 1e-12));
        }

        #[test]
        fn shift_moves_every_age(prev in prop::collection::vec(1.0f64..1e5, 3..111)) {
            match shift_exposure_curve(&prev, 2000) {
                Ok(s) => {
                    for x in 1..prev.len() {
                        prop_assert_eq!(s.values[x], prev[x - 1]);
                    }
                    prop_assert_eq!(s.values[0], 2.0 * prev[0] - prev[1]);
                }
                Err(UngroupError::DegenerateCurve(v)) => prop_assert!(v <= 0.0),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
