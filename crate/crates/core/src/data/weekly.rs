//! Weekly bucketed series (STMF / Eurostat shapes) and their annualization.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_partition, AgeBucket, Country, DataError, Gender, WeeklyShape, WEEKLY_REL_TOL};

/// Weeks in an ordinary ISO year; also the exposure annualization factor.
pub const WEEKS_PER_YEAR: f64 = 52.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExposureOrigin {
    /// Taken from an explicit exposure column.
    Column,
    /// Reconstructed as deaths / death rate.
    DerivedFromRate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeeklyCell {
    pub deaths: f64,
    pub exposure: Option<f64>,
    pub death_rate: Option<f64>,
    pub exposure_origin: Option<ExposureOrigin>,
}

impl WeeklyCell {
    pub fn deaths_only(deaths: f64) -> Self {
        WeeklyCell {
            deaths,
            exposure: None,
            death_rate: None,
            exposure_origin: None,
        }
    }

    pub fn with_exposure(deaths: f64, exposure: f64) -> Self {
        WeeklyCell {
            deaths,
            exposure: Some(exposure),
            death_rate: None,
            exposure_origin: Some(ExposureOrigin::Column),
        }
    }
}

/// E = d / m for a weekly cell.
pub fn derive_weekly_exposure(deaths: f64, death_rate: f64) -> Result<f64, DataError> {
    if !(death_rate > 0.0) {
        return Err(DataError::NonPositiveRate(death_rate));
    }
    Ok(deaths / death_rate)
}

/// Weekly deaths (and optionally exposures and rates) per age bucket for one
/// (country, gender, year).
#[derive(Debug, Clone, PartialEq)]
pub struct BucketedWeeklySeries {
    pub country: Country,
    pub gender: Gender,
    pub year: i32,
    buckets: Vec<AgeBucket>,
    weeks: Vec<BTreeMap<u32, WeeklyCell>>,
}

impl BucketedWeeklySeries {
    pub fn new(country: Country, gender: Gender, year: i32, buckets: Vec<AgeBucket>) -> Result<Self, DataError> {
        validate_partition(&buckets)?;
        let weeks = vec![BTreeMap::new(); buckets.len()];
        Ok(BucketedWeeklySeries {
            country,
            gender,
            year,
            buckets,
            weeks,
        })
    }

    fn context(&self) -> String {
        format!("{} {} {}", self.country, self.gender, self.year)
    }

    pub fn buckets(&self) -> &[AgeBucket] {
        &self.buckets
    }

    pub fn bucket_index(&self, bucket: &AgeBucket) -> Option<usize> {
        self.buckets.iter().position(|b| b == bucket)
    }

    /// 53 when any week-53 row is present, otherwise 52.
    pub fn week_count(&self) -> u32 {
        let max = self
            .weeks
            .iter()
            .filter_map(|w| w.keys().next_back())
            .max()
            .copied()
            .unwrap_or(0);
        if max >= 53 {
            53
        } else {
            52
        }
    }

    pub fn cell(&self, bucket: usize, week: u32) -> Option<&WeeklyCell> {
        self.weeks.get(bucket)?.get(&week)
    }

    pub fn weeks(&self, bucket: usize) -> impl Iterator<Item = (u32, &WeeklyCell)> {
        self.weeks[bucket].iter().map(|(w, c)| (*w, c))
    }

    pub fn insert(&mut self, bucket: usize, week: u32, cell: WeeklyCell) -> Result<(), DataError> {
        let label = self.buckets[bucket].label();
        if !(1..=53).contains(&week) {
            return Err(DataError::Validation(format!("week {week} outside 1..=53")));
        }
        if !(cell.deaths.is_finite() && cell.deaths >= 0.0) {
            return Err(DataError::Validation(format!(
                "{} bucket {label} week {week}: negative deaths {}",
                self.context(),
                cell.deaths
            )));
        }
        if let Some(e) = cell.exposure {
            if !(e.is_finite() && e > 0.0) {
                return Err(DataError::Validation(format!(
                    "{} bucket {label} week {week}: exposure {e} must be positive",
                    self.context()
                )));
            }
            if let Some(m) = cell.death_rate {
                let lhs = m * e;
                if (lhs - cell.deaths).abs() > WEEKLY_REL_TOL * cell.deaths.abs().max(lhs.abs()) {
                    return Err(DataError::Validation(format!(
                        "{} bucket {label} week {week}: m*E = {lhs} disagrees with d = {}",
                        self.context(),
                        cell.deaths
                    )));
                }
            }
        }
        let ctx = self.context();
        match self.weeks[bucket].entry(week) {
            std::collections::btree_map::Entry::Occupied(_) => Err(DataError::DuplicateWeek {
                bucket: label,
                week,
                context: ctx,
            }),
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(cell);
                Ok(())
            }
        }
    }

    fn check_complete(&self) -> Result<(), DataError> {
        let wc = self.week_count();
        for (b, weeks) in self.weeks.iter().enumerate() {
            let missing: Vec<u32> = (1..=wc).filter(|w| !weeks.contains_key(w)).collect();
            if !missing.is_empty() {
                return Err(DataError::MissingWeeks {
                    context: self.context(),
                    bucket: self.buckets[b].label(),
                    missing,
                });
            }
        }
        Ok(())
    }

    pub fn total_deaths(&self) -> f64 {
        self.weeks.iter().flat_map(|w| w.values()).map(|c| c.deaths).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Deaths,
    Exposure,
}

/// Annual totals of one quantity per age bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketedAnnualSeries {
    pub country: Country,
    pub gender: Gender,
    pub year: i32,
    pub quantity: Quantity,
    buckets: Vec<AgeBucket>,
    values: Vec<f64>,
}

impl BucketedAnnualSeries {
    pub fn new(
        country: Country,
        gender: Gender,
        year: i32,
        quantity: Quantity,
        buckets: Vec<AgeBucket>,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        validate_partition(&buckets)?;
        if buckets.len() != values.len() {
            return Err(DataError::StructureMismatch("bucket/value length mismatch".into()));
        }
        for (b, &v) in buckets.iter().zip(&values) {
            let ok = match quantity {
                Quantity::Deaths => v.is_finite() && v >= 0.0,
                Quantity::Exposure => v.is_finite() && v > 0.0,
            };
            if !ok {
                return Err(DataError::Validation(format!(
                    "{country} {gender} {year} bucket {b}: invalid {quantity:?} total {v}"
                )));
            }
        }
        Ok(BucketedAnnualSeries {
            country,
            gender,
            year,
            quantity,
            buckets,
            values,
        })
    }

    pub fn buckets(&self) -> &[AgeBucket] {
        &self.buckets
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (AgeBucket, f64)> + '_ {
        self.buckets.iter().copied().zip(self.values.iter().copied())
    }

    /// The trailing open bucket and its total, if any.
    pub fn open_bucket(&self) -> Option<(AgeBucket, f64)> {
        self.iter().last().filter(|(b, _)| b.is_open())
    }
}

/// Annual bucket deaths: the weekly sum, rescaled by 52/53 in 53-week years.
pub fn annualize_weekly_deaths(series: &BucketedWeeklySeries) -> Result<BucketedAnnualSeries, DataError> {
    series.check_complete()?;
    let wc = series.week_count();
    let values = series
        .weeks
        .iter()
        .map(|weeks| {
            let sum: f64 = weeks.values().map(|c| c.deaths).sum();
            if wc == 53 {
                sum * (WEEKS_PER_YEAR / 53.0)
            } else {
                sum
            }
        })
        .collect();
    BucketedAnnualSeries::new(
        series.country.clone(),
        series.gender,
        series.year,
        Quantity::Deaths,
        series.buckets.clone(),
        values,
    )
}

/// Annual bucket exposures: 52 times the constant weekly exposure, whatever
/// the number of ISO weeks.
pub fn annualize_weekly_exposure(series: &BucketedWeeklySeries) -> Result<BucketedAnnualSeries, DataError> {
    series.check_complete()?;
    let mut values = Vec::with_capacity(series.buckets.len());
    for (b, weeks) in series.weeks.iter().enumerate() {
        let label = series.buckets[b].label();
        let mut known = weeks.iter().filter_map(|(w, c)| c.exposure.map(|e| (*w, e)));
        let (_, reference) = known.next().ok_or_else(|| {
            DataError::Validation(format!(
                "{} bucket {label}: no week carries an exposure",
                series.context()
            ))
        })?;
        for (week, value) in known {
            if (value - reference).abs() > WEEKLY_REL_TOL * reference.abs() {
                return Err(DataError::NonConstantExposure {
                    context: series.context(),
                    bucket: label,
                    week,
                    value,
                    reference,
                });
            }
        }
        values.push(WEEKS_PER_YEAR * reference);
    }
    BucketedAnnualSeries::new(
        series.country.clone(),
        series.gender,
        series.year,
        Quantity::Exposure,
        series.buckets.clone(),
        values,
    )
}

/// Cell-wise sum of constituent series into one series for `country`.
/// Exposures are summed only where every constituent carries one.
pub fn aggregate_series(parts: &[BucketedWeeklySeries], country: Country) -> Result<BucketedWeeklySeries, DataError> {
    let first = parts
        .first()
        .ok_or_else(|| DataError::StructureMismatch("nothing to aggregate".into()))?;
    for p in parts {
        if p.buckets != first.buckets || p.year != first.year || p.gender != first.gender {
            return Err(DataError::StructureMismatch(format!(
                "{} does not share year/gender/buckets with {}",
                p.context(),
                first.context()
            )));
        }
        for b in 0..p.buckets.len() {
            let a: BTreeSet<u32> = p.weeks[b].keys().copied().collect();
            let f: BTreeSet<u32> = first.weeks[b].keys().copied().collect();
            if a != f {
                let diff: Vec<u32> = a.symmetric_difference(&f).copied().collect();
                return Err(DataError::StructureMismatch(format!(
                    "bucket {} weeks differ between {} and {}: {diff:?}",
                    p.buckets[b],
                    p.context(),
                    first.context()
                )));
            }
        }
    }
    let mut out = BucketedWeeklySeries::new(country, first.gender, first.year, first.buckets.clone())?;
    for b in 0..first.buckets.len() {
        for &week in first.weeks[b].keys() {
            let cells: Vec<&WeeklyCell> = parts.iter().map(|p| &p.weeks[b][&week]).collect();
            let deaths: f64 = cells.iter().map(|c| c.deaths).sum();
            let exposure: Option<f64> = cells.iter().map(|c| c.exposure).sum();
            let cell = WeeklyCell {
                deaths,
                exposure,
                death_rate: exposure.map(|e| deaths / e),
                exposure_origin: exposure.map(|_| ExposureOrigin::Column),
            };
            out.insert(b, week, cell)?;
        }
    }
    Ok(out)
}

/// United Kingdom from Northern Ireland, England and Wales, and Scotland.
pub fn aggregate_uk(parts: &[BucketedWeeklySeries]) -> Result<BucketedWeeklySeries, DataError> {
    if parts.len() != 3 {
        return Err(DataError::StructureMismatch(format!(
            "UK aggregation expects 3 constituents, got {}",
            parts.len()
        )));
    }
    aggregate_series(parts, Country::new("UNK"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyTolerance {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for ConsistencyTolerance {
    fn default() -> Self {
        ConsistencyTolerance {
            relative: 1e-3,
            absolute: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketMismatch {
    pub bucket: AgeBucket,
    pub week: u32,
    /// `None` when the week is missing on that side.
    pub eurostat: Option<f64>,
    pub stmf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConsistencyOutcome {
    Consistent,
    Inconsistent(Vec<BucketMismatch>),
    /// The fine buckets do not roll up onto the coarse ones.
    NotComparable(String),
}

impl ConsistencyOutcome {
    pub fn is_consistent(&self) -> bool {
        matches!(self, ConsistencyOutcome::Consistent)
    }
}

/// Rolls the Eurostat buckets up to the STMF buckets and compares weekly
/// deaths bucket by bucket.
pub fn check_eurostat_stmf_consistency(
    euro: &BucketedWeeklySeries,
    stmf: &BucketedWeeklySeries,
    tol: ConsistencyTolerance,
) -> ConsistencyOutcome {
    // Map each coarse bucket to the fine buckets it contains.
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); stmf.buckets.len()];
    for (fi, fine) in euro.buckets.iter().enumerate() {
        let Some(ci) = stmf.buckets.iter().position(|c| c.contains(fine.lower)) else {
            return ConsistencyOutcome::NotComparable(format!("bucket {fine} has no coarse counterpart"));
        };
        let coarse = stmf.buckets[ci];
        let fits = match (fine.upper, coarse.upper) {
            (Some(fu), Some(cu)) => fu <= cu,
            (_, None) => true,
            (None, Some(_)) => false,
        };
        if !fits {
            return ConsistencyOutcome::NotComparable(format!("bucket {fine} straddles {coarse}"));
        }
        groups[ci].push(fi);
    }
    if let Some(ci) = groups.iter().position(|g| g.is_empty()) {
        return ConsistencyOutcome::NotComparable(format!("no fine bucket covers {}", stmf.buckets[ci]));
    }

    let mut mismatches = Vec::new();
    for (ci, group) in groups.iter().enumerate() {
        let mut weeks: BTreeSet<u32> = stmf.weeks[ci].keys().copied().collect();
        for &fi in group {
            weeks.extend(euro.weeks[fi].keys().copied());
        }
        for week in weeks {
            let rolled: Option<f64> = group.iter().map(|&fi| euro.weeks[fi].get(&week).map(|c| c.deaths)).sum();
            let coarse = stmf.weeks[ci].get(&week).map(|c| c.deaths);
            let ok = match (rolled, coarse) {
                (Some(r), Some(s)) => (r - s).abs() <= tol.relative * s.abs() + tol.absolute,
                _ => false,
            };
            if !ok {
                mismatches.push(BucketMismatch {
                    bucket: stmf.buckets[ci],
                    week,
                    eurostat: rolled,
                    stmf: coarse,
                });
            }
        }
    }
    if mismatches.is_empty() {
        ConsistencyOutcome::Consistent
    } else {
        ConsistencyOutcome::Inconsistent(mismatches)
    }
}

fn parse_num(raw: Option<&str>, name: &str, path: &str, line: u64) -> Result<Option<f64>, DataError> {
    match raw.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => s.parse().map(Some).map_err(|_| DataError::Parse {
            path: path.into(),
            line,
            message: format!("cannot parse `{name}` from `{s}`"),
        }),
    }
}

/// Reads a weekly file; returns one series per (country, gender, year) in
/// sorted order.
pub fn load_weekly_csv(path: &Path, shape: WeeklyShape) -> Result<Vec<BucketedWeeklySeries>, DataError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: p.clone(),
        source,
    })?;
    read_weekly(file, &p, shape)
}

pub(crate) fn read_weekly<R: std::io::Read>(
    reader: R,
    p: &str,
    shape: WeeklyShape,
) -> Result<Vec<BucketedWeeklySeries>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            path: p.into(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let base = ["country", "year", "week", "gender", "bucket", "deaths"];
    let header_ok = match shape {
        WeeklyShape::Stmf => {
            headers.len() >= 7
                && headers[..6] == base
                && headers[6] == "death_rate"
                && (headers.len() == 7 || (headers.len() == 8 && headers[7] == "exposure"))
        }
        WeeklyShape::Eurow => headers == base,
    };
    if !header_ok {
        return Err(DataError::Parse {
            path: p.into(),
            line: 1,
            message: format!("unexpected header for {} shape: {}", shape.name(), headers.join(",")),
        });
    }
    let buckets = shape.buckets();
    let mut series: BTreeMap<(Country, Gender, i32), BucketedWeeklySeries> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Parse {
            path: p.into(),
            line: e.position().map_or(0, |pos| pos.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |pos| pos.line());
        let perr = |message: String| DataError::Parse {
            path: p.into(),
            line,
            message,
        };
        let country = Country::new(rec.get(0).unwrap_or_default());
        let year: i32 = rec
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| perr("bad year".into()))?;
        let week: u32 = rec
            .get(2)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| perr("bad week".into()))?;
        let gender: Gender = rec
            .get(3)
            .unwrap_or_default()
            .parse()
            .map_err(|_| perr("bad gender".into()))?;
        let label = rec.get(4).unwrap_or_default().trim();
        let bucket_idx = AgeBucket::parse(label)
            .and_then(|b| buckets.iter().position(|x| *x == b))
            .ok_or_else(|| DataError::UnknownBucket {
                label: label.to_string(),
                shape: shape.name().to_string(),
            })?;
        let deaths = parse_num(rec.get(5), "deaths", p, line)?.ok_or_else(|| perr("missing deaths".into()))?;
        let cell = match shape {
            WeeklyShape::Eurow => WeeklyCell::deaths_only(deaths),
            WeeklyShape::Stmf => {
                let rate = parse_num(rec.get(6), "death_rate", p, line)?;
                let column = parse_num(rec.get(7), "exposure", p, line)?;
                let (exposure, origin) = match (column, rate) {
                    (Some(e), _) => (Some(e), Some(ExposureOrigin::Column)),
                    (None, Some(m)) if m > 0.0 => {
                        (Some(derive_weekly_exposure(deaths, m)?), Some(ExposureOrigin::DerivedFromRate))
                    }
                    _ => (None, None),
                };
                WeeklyCell {
                    deaths,
                    exposure,
                    death_rate: rate,
                    exposure_origin: origin,
                }
            }
        };
        let entry = match series.entry((country.clone(), gender, year)) {
            std::collections::btree_map::Entry::Occupied(o) => o.into_mut(),
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(BucketedWeeklySeries::new(country, gender, year, buckets.clone())?)
            }
        };
        entry.insert(bucket_idx, week, cell).map_err(|e| match e {
            DataError::Validation(m) => perr(m),
            other => other,
        })?;
    }
    Ok(series.into_values().collect())
}

/// Writes series in the given weekly shape, sorted by (country, year, week,
/// gender, bucket). STMF rows carry the death rate and, when present, the
/// exposure column only if `with_exposure` is set.
pub fn write_weekly_csv(
    path: &Path,
    shape: WeeklyShape,
    series: &[BucketedWeeklySeries],
    with_exposure: bool,
) -> Result<(), DataError> {
    let p = path.display().to_string();
    let io = |source| DataError::Io { path: p.clone(), source };
    let mut rows: Vec<(String, i32, u32, Gender, usize, String, String)> = Vec::new();
    for s in series {
        for (b, weeks) in s.weeks.iter().enumerate() {
            for (week, c) in weeks {
                let tail = match shape {
                    WeeklyShape::Eurow => String::new(),
                    WeeklyShape::Stmf => {
                        let m = c
                            .death_rate
                            .or_else(|| c.exposure.map(|e| c.deaths / e))
                            .map(|m| m.to_string())
                            .unwrap_or_default();
                        if with_exposure {
                            format!(",{m},{}", c.exposure.map(|e| e.to_string()).unwrap_or_default())
                        } else {
                            format!(",{m}")
                        }
                    }
                };
                rows.push((
                    s.country.to_string(),
                    s.year,
                    *week,
                    s.gender,
                    b,
                    s.buckets[b].label(),
                    format!("{}{tail}", c.deaths),
                ));
            }
        }
    }
    rows.sort_by(|a, b| (&a.0, a.1, a.2, a.3, a.4).cmp(&(&b.0, b.1, b.2, b.3, b.4)));
    let mut f = std::io::BufWriter::new(File::create(path).map_err(io)?);
    let header = match (shape, with_exposure) {
        (WeeklyShape::Eurow, _) => "country,year,week,gender,bucket,deaths",
        (WeeklyShape::Stmf, false) => "country,year,week,gender,bucket,deaths,death_rate",
        (WeeklyShape::Stmf, true) => "country,year,week,gender,bucket,deaths,death_rate,exposure",
    };
    writeln!(f, "{header}").map_err(io)?;
    for (c, t, w, g, _, label, rest) in rows {
        writeln!(f, "{c},{t},{w},{g},{label},{rest}").map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(buckets: Vec<AgeBucket>, weeks: u32, deaths: impl Fn(usize, u32) -> f64) -> BucketedWeeklySeries {
        let mut s = BucketedWeeklySeries::new("BEL".into(), Gender::Male, 2020, buckets).unwrap();
        for b in 0..s.buckets().len() {
            for w in 1..=weeks {
                s.insert(b, w, WeeklyCell::deaths_only(deaths(b, w))).unwrap();
            }
        }
        s
    }

    #[test]
    fn derive_exposure_cases() {
        assert_eq!(derive_weekly_exposure(100.0, 0.5).unwrap(), 200.0);
        assert_eq!(derive_weekly_exposure(0.0, 0.01).unwrap(), 0.0);
        assert!(derive_weekly_exposure(1.0, 0.0).is_err());
        assert!(derive_weekly_exposure(1.0, -0.1).is_err());
    }

    #[test]
    fn annual_deaths_plain_and_rescaled() {
        let s = series(vec![AgeBucket::open(0)], 52, |_, _| 10.0);
        assert_eq!(annualize_weekly_deaths(&s).unwrap().values(), &[520.0]);
        let s = series(vec![AgeBucket::open(0)], 53, |_, _| 53.0);
        assert_eq!(s.week_count(), 53);
        let v = annualize_weekly_deaths(&s).unwrap().values()[0];
        assert!((v - 2756.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn missing_week_names_gap() {
        let mut s = BucketedWeeklySeries::new("BEL".into(), Gender::Male, 2019, vec![AgeBucket::open(0)]).unwrap();
        for w in (1..=52).filter(|&w| w != 7) {
            s.insert(0, w, WeeklyCell::deaths_only(1.0)).unwrap();
        }
        match annualize_weekly_deaths(&s).unwrap_err() {
            DataError::MissingWeeks { missing, .. } => assert_eq!(missing, vec![7]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn exposure_factor_is_52() {
        let mut s = BucketedWeeklySeries::new("BEL".into(), Gender::Male, 2020, vec![AgeBucket::open(0)]).unwrap();
        for w in 1..=53 {
            s.insert(0, w, WeeklyCell::with_exposure(1.0, 1.0)).unwrap();
        }
        assert_eq!(annualize_weekly_exposure(&s).unwrap().values(), &[52.0]);

        let mut s = BucketedWeeklySeries::new("BEL".into(), Gender::Male, 2020, vec![AgeBucket::open(0)]).unwrap();
        for w in 1..=52 {
            s.insert(0, w, WeeklyCell::with_exposure(10.0, 19013.71)).unwrap();
        }
        let v = annualize_weekly_exposure(&s).unwrap().values()[0];
        assert!((v - 988712.92).abs() < 1e-6);
        // within 0.1 of the published bucket total 988 713.02
        assert!((v - 988713.02).abs() < 0.11);
    }

    #[test]
    fn non_constant_exposure_rejected() {
        let mut s = BucketedWeeklySeries::new("BEL".into(), Gender::Male, 2019, vec![AgeBucket::open(0)]).unwrap();
        for w in 1..=52 {
            let e = if w == 30 { 1.01 } else { 1.0 };
            s.insert(0, w, WeeklyCell::with_exposure(0.0, e)).unwrap();
        }
        assert!(matches!(
            annualize_weekly_exposure(&s),
            Err(DataError::NonConstantExposure { week: 30, .. })
        ));
    }

    #[test]
    fn stmf_rows_reconstruct_exposure() {
        let text = "country,year,week,gender,bucket,deaths,death_rate\n\
                    BEL,2020,1,M,0-14,10,0.001\n\
                    BEL,2020,2,M,0-14,0,0\n";
        let s = read_weekly(text.as_bytes(), "s", WeeklyShape::Stmf).unwrap();
        let c = s[0].cell(0, 1).unwrap();
        assert!((c.exposure.unwrap() - 10000.0).abs() < 1e-9);
        assert_eq!(c.exposure_origin, Some(ExposureOrigin::DerivedFromRate));
        assert_eq!(s[0].cell(0, 2).unwrap().exposure, None);

        let text = "country,year,week,gender,bucket,deaths,death_rate,exposure\n\
                    BEL,2020,1,M,0-14,10,0.001,10000\n";
        let s = read_weekly(text.as_bytes(), "s", WeeklyShape::Stmf).unwrap();
        assert_eq!(s[0].cell(0, 1).unwrap().exposure_origin, Some(ExposureOrigin::Column));
    }

    #[test]
    fn weekly_parse_errors() {
        let bad_bucket = "country,year,week,gender,bucket,deaths,death_rate\nBEL,2020,1,M,10-14,1,0.1\n";
        assert!(matches!(
            read_weekly(bad_bucket.as_bytes(), "s", WeeklyShape::Stmf),
            Err(DataError::UnknownBucket { .. })
        ));
        let dup = "country,year,week,gender,bucket,deaths\nNLD,2020,1,F,0-4,1\nNLD,2020,1,F,0-4,2\n";
        assert!(matches!(
            read_weekly(dup.as_bytes(), "e", WeeklyShape::Eurow),
            Err(DataError::DuplicateWeek { week: 1, .. })
        ));
    }

    #[test]
    fn eurow_53_week_year() {
        let mut text = String::from("country,year,week,gender,bucket,deaths\n");
        for w in 1..=53 {
            text.push_str(&format!("NLD,2020,{w},M,90+,5\n"));
        }
        let s = read_weekly(text.as_bytes(), "e", WeeklyShape::Eurow).unwrap();
        assert_eq!(s[0].week_count(), 53);
    }

    #[test]
    fn uk_aggregation() {
        let buckets = WeeklyShape::Stmf.buckets();
        let parts: Vec<_> = [5.0, 3.0, 2.0]
            .iter()
            .map(|&d| series(buckets.clone(), 52, move |_, _| d))
            .collect();
        let uk = aggregate_uk(&parts).unwrap();
        assert_eq!(uk.country.as_str(), "UNK");
        assert_eq!(uk.cell(2, 10).unwrap().deaths, 10.0);
        let total: f64 = parts.iter().map(|p| p.total_deaths()).sum();
        assert_eq!(uk.total_deaths(), total);

        let mut short = BucketedWeeklySeries::new("NIR".into(), Gender::Male, 2020, buckets.clone()).unwrap();
        for b in 0..buckets.len() {
            for w in (1..=52).filter(|&w| w != 7) {
                short.insert(b, w, WeeklyCell::deaths_only(1.0)).unwrap();
            }
        }
        let broken = [parts[0].clone(), parts[1].clone(), short];
        assert!(aggregate_uk(&broken).is_err());
    }

    #[test]
    fn consistency_outcomes() {
        let euro = series(WeeklyShape::Eurow.buckets(), 52, |b, w| (b as f64 + 1.0) * (w as f64));
        let stmf_buckets = WeeklyShape::Stmf.buckets();
        let roll = |c: usize, w: u32| -> f64 {
            let coarse = stmf_buckets[c];
            WeeklyShape::Eurow
                .buckets()
                .iter()
                .enumerate()
                .filter(|(_, f)| coarse.contains(f.lower))
                .map(|(fi, _)| (fi as f64 + 1.0) * w as f64)
                .sum()
        };
        let stmf = series(stmf_buckets.clone(), 52, roll);
        let tol = ConsistencyTolerance::default();
        assert!(check_eurostat_stmf_consistency(&euro, &stmf, tol).is_consistent());

        let off = series(stmf_buckets.clone(), 52, |c, w| {
            if c == 3 && w == 12 {
                roll(c, w) * 1.5
            } else {
                roll(c, w)
            }
        });
        match check_eurostat_stmf_consistency(&euro, &off, tol) {
            ConsistencyOutcome::Inconsistent(m) => {
                assert_eq!(m.len(), 1);
                assert_eq!(m[0].bucket, AgeBucket::closed(75, 84));
                assert_eq!(m[0].week, 12);
            }
            o => panic!("{o:?}"),
        }

        let ten_year: Vec<_> = (0..9)
            .map(|i| AgeBucket::closed(10 * i, 10 * i + 9))
            .chain([AgeBucket::open(90)])
            .collect();
        let germany = series(ten_year, 52, |_, _| 1.0);
        assert!(matches!(
            check_eurostat_stmf_consistency(&germany, &stmf, tol),
            ConsistencyOutcome::NotComparable(_)
        ));
    }
}
