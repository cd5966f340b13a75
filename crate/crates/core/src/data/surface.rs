use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AgeRange, Country, DataError, Gender, Provenance, YearRange, MAX_CENTRAL_RATE};

/// Dense age-by-year table, age-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeYearGrid {
    ages: AgeRange,
    years: YearRange,
    values: Vec<f64>,
}

impl AgeYearGrid {
    pub fn filled(ages: AgeRange, years: YearRange, value: f64) -> Self {
        AgeYearGrid {
            ages,
            years,
            values: vec![value; ages.len() * years.len()],
        }
    }

    pub fn from_fn(ages: AgeRange, years: YearRange, mut f: impl FnMut(u32, i32) -> f64) -> Self {
        let mut values = Vec::with_capacity(ages.len() * years.len());
        for x in ages.iter() {
            for t in years.iter() {
                values.push(f(x, t));
            }
        }
        AgeYearGrid { ages, years, values }
    }

    pub fn ages(&self) -> AgeRange {
        self.ages
    }

    pub fn years(&self) -> YearRange {
        self.years
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    /// Value by zero-based (age index, year index).
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.years.len() + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let n = self.years.len();
        &mut self.values[i * n + j]
    }

    pub fn get(&self, age: u32, year: i32) -> Option<f64> {
        Some(self.at(self.ages.index(age)?, self.years.index(year)?))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn year_column(&self, year: i32) -> Option<Vec<f64>> {
        let j = self.years.index(year)?;
        Some((0..self.n_ages()).map(|i| self.at(i, j)).collect())
    }

    /// Sub-grid on a narrower year window.
    pub fn restrict_years(&self, years: YearRange) -> Option<AgeYearGrid> {
        let off = self.years.index(years.first())?;
        self.years.index(years.last())?;
        Some(AgeYearGrid::from_fn(self.ages, years, |x, t| {
            self.at(
                self.ages.index(x).unwrap(),
                off + (t - years.first()) as usize,
            )
        }))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> AgeYearGrid {
        AgeYearGrid {
            ages: self.ages,
            years: self.years,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellProvenance {
    pub deaths: Provenance,
    pub exposure: Provenance,
}

/// Complete rectangular grid of deaths and exposures for one population.
#[derive(Debug, Clone)]
pub struct MortalitySurface {
    country: Country,
    gender: Gender,
    deaths: AgeYearGrid,
    exposures: AgeYearGrid,
    provenance: Vec<CellProvenance>,
}

impl MortalitySurface {
    pub fn new(
        country: Country,
        gender: Gender,
        deaths: AgeYearGrid,
        exposures: AgeYearGrid,
        provenance: Vec<CellProvenance>,
    ) -> Result<Self, DataError> {
        if deaths.ages() != exposures.ages() || deaths.years() != exposures.years() {
            return Err(DataError::StructureMismatch(
                "deaths and exposures grids differ in shape".into(),
            ));
        }
        if provenance.len() != deaths.values().len() {
            return Err(DataError::StructureMismatch(
                "provenance length does not match grid".into(),
            ));
        }
        for x in deaths.ages().iter() {
            for t in deaths.years().iter() {
                let d = deaths.get(x, t).unwrap();
                let e = exposures.get(x, t).unwrap();
                if !(d.is_finite() && d >= 0.0) {
                    return Err(DataError::Validation(format!(
                        "{country} {gender} age {x} year {t}: deaths {d} must be >= 0"
                    )));
                }
                if !(e.is_finite() && e > 0.0) {
                    return Err(DataError::Validation(format!(
                        "{country} {gender} age {x} year {t}: exposure {e} must be > 0"
                    )));
                }
                if d / e > MAX_CENTRAL_RATE {
                    return Err(DataError::Validation(format!(
                        "{country} {gender} age {x} year {t}: central death rate {} exceeds {MAX_CENTRAL_RATE}",
                        d / e
                    )));
                }
            }
        }
        Ok(MortalitySurface {
            country,
            gender,
            deaths,
            exposures,
            provenance,
        })
    }

    /// Surface with a single provenance label on every cell.
    pub fn uniform(
        country: Country,
        gender: Gender,
        deaths: AgeYearGrid,
        exposures: AgeYearGrid,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        let n = deaths.values().len();
        let p = CellProvenance {
            deaths: provenance,
            exposure: provenance,
        };
        Self::new(country, gender, deaths, exposures, vec![p; n])
    }

    pub fn country(&self) -> &Country {
        &self.country
    }

    pub fn gender(&self) -> Gender {
        self.gender
    }

    pub fn ages(&self) -> AgeRange {
        self.deaths.ages()
    }

    pub fn years(&self) -> YearRange {
        self.deaths.years()
    }

    pub fn deaths(&self) -> &AgeYearGrid {
        &self.deaths
    }

    pub fn exposures(&self) -> &AgeYearGrid {
        &self.exposures
    }

    pub fn provenance(&self, age: u32, year: i32) -> Option<CellProvenance> {
        let i = self.ages().index(age)?;
        let j = self.years().index(year)?;
        Some(self.provenance[i * self.years().len() + j])
    }

    pub fn provenance_cells(&self) -> &[CellProvenance] {
        &self.provenance
    }

    pub fn restrict_years(&self, years: YearRange) -> Option<MortalitySurface> {
        let deaths = self.deaths.restrict_years(years)?;
        let exposures = self.exposures.restrict_years(years)?;
        let off = self.years().index(years.first())?;
        let n = self.years().len();
        let mut provenance = Vec::with_capacity(deaths.values().len());
        for i in 0..self.ages().len() {
            for j in 0..years.len() {
                provenance.push(self.provenance[i * n + off + j]);
            }
        }
        Some(MortalitySurface {
            country: self.country.clone(),
            gender: self.gender,
            deaths,
            exposures,
            provenance,
        })
    }
}

/// One surface per (country, gender) on a shared age and year range.
#[derive(Debug, Clone)]
pub struct MultiPopulationDataset {
    ages: AgeRange,
    years: YearRange,
    surfaces: BTreeMap<(Country, Gender), MortalitySurface>,
    common_pool: Vec<Country>,
}

impl MultiPopulationDataset {
    pub fn new(
        surfaces: Vec<MortalitySurface>,
        common_pool: Vec<Country>,
    ) -> Result<Self, DataError> {
        let first = surfaces
            .first()
            .ok_or_else(|| DataError::Validation("dataset has no surfaces".into()))?;
        let (ages, years) = (first.ages(), first.years());
        let mut map = BTreeMap::new();
        for s in surfaces {
            if s.ages() != ages || s.years() != years {
                return Err(DataError::StructureMismatch(format!(
                    "surface {} {} does not share the dataset age/year range",
                    s.country(),
                    s.gender()
                )));
            }
            let key = (s.country().clone(), s.gender());
            if map.insert(key, s).is_some() {
                return Err(DataError::StructureMismatch(
                    "duplicate (country, gender) surface".into(),
                ));
            }
        }
        if common_pool.is_empty() {
            return Err(DataError::Validation("common pool is empty".into()));
        }
        for c in &common_pool {
            for g in Gender::BOTH {
                if !map.contains_key(&(c.clone(), g)) {
                    return Err(DataError::Validation(format!(
                        "pool country {c} has no {g} surface"
                    )));
                }
            }
        }
        Ok(MultiPopulationDataset {
            ages,
            years,
            surfaces: map,
            common_pool,
        })
    }

    pub fn ages(&self) -> AgeRange {
        self.ages
    }

    pub fn years(&self) -> YearRange {
        self.years
    }

    pub fn common_pool(&self) -> &[Country] {
        &self.common_pool
    }

    pub fn surface(&self, country: &Country, gender: Gender) -> Option<&MortalitySurface> {
        self.surfaces.get(&(country.clone(), gender))
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &MortalitySurface> {
        self.surfaces.values()
    }

    /// Pooled deaths and exposures `(d^T, E^T)` over the common pool.
    pub fn aggregate(&self, gender: Gender) -> (AgeYearGrid, AgeYearGrid) {
        let mut d = AgeYearGrid::filled(self.ages, self.years, 0.0);
        let mut e = AgeYearGrid::filled(self.ages, self.years, 0.0);
        for c in &self.common_pool {
            let s = &self.surfaces[&(c.clone(), gender)];
            for i in 0..self.ages.len() {
                for j in 0..self.years.len() {
                    *d.at_mut(i, j) += s.deaths().at(i, j);
                    *e.at_mut(i, j) += s.exposures().at(i, j);
                }
            }
        }
        (d, e)
    }

    pub fn restrict_years(&self, years: YearRange) -> Option<MultiPopulationDataset> {
        let surfaces = self
            .surfaces
            .values()
            .map(|s| s.restrict_years(years))
            .collect::<Option<Vec<_>>>()?;
        MultiPopulationDataset::new(surfaces, self.common_pool.clone()).ok()
    }

    /// Number of (cell, quantity) entries carrying the given provenance.
    pub fn count_provenance(&self, provenance: Provenance) -> usize {
        self.surfaces
            .values()
            .flat_map(|s| s.provenance_cells())
            .map(|p| (p.deaths == provenance) as usize + (p.exposure == provenance) as usize)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(v: f64) -> AgeYearGrid {
        AgeYearGrid::filled(AgeRange::new(0, 2).unwrap(), YearRange::new(2000, 2001).unwrap(), v)
    }

    #[test]
    fn surface_rejects_bad_cells() {
        let c = Country::new("BEL");
        let err = MortalitySurface::uniform(c.clone(), Gender::Male, grid(1.0), grid(0.0), Provenance::Hmd);
        assert!(err.is_err());
        let err = MortalitySurface::uniform(c.clone(), Gender::Male, grid(-1.0), grid(1.0), Provenance::Hmd);
        assert!(err.is_err());
        let err = MortalitySurface::uniform(c, Gender::Male, grid(6.0), grid(1.0), Provenance::Hmd);
        assert!(err.is_err());
    }

    #[test]
    fn aggregate_sums_pool_only() {
        let mut surfaces = Vec::new();
        for (code, d) in [("A", 1.0), ("B", 2.0), ("C", 40.0)] {
            for g in Gender::BOTH {
                surfaces.push(
                    MortalitySurface::uniform(Country::new(code), g, grid(d), grid(10.0), Provenance::Hmd)
                        .unwrap(),
                );
            }
        }
        let ds = MultiPopulationDataset::new(surfaces, vec!["A".into(), "B".into()]).unwrap();
        let (d, e) = ds.aggregate(Gender::Female);
        assert!(d.values().iter().all(|&v| v == 3.0));
        assert!(e.values().iter().all(|&v| v == 20.0));
        assert_eq!(ds.count_provenance(Provenance::Hmd), 6 * 6 * 2);
    }

    #[test]
    fn restrict_years_keeps_values() {
        let ages = AgeRange::new(0, 1).unwrap();
        let years = YearRange::new(2000, 2004).unwrap();
        let g = AgeYearGrid::from_fn(ages, years, |x, t| x as f64 * 100.0 + (t - 2000) as f64);
        let r = g.restrict_years(YearRange::new(2002, 2003).unwrap()).unwrap();
        assert_eq!(r.get(1, 2003), Some(103.0));
        assert_eq!(r.get(0, 2002), Some(2.0));
        assert!(g.restrict_years(YearRange::new(1999, 2001).unwrap()).is_none());
    }
}
