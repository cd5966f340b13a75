//! Individual-age annual files (`country,year,gender,age,deaths,exposure`).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::surface::{AgeYearGrid, CellProvenance, MortalitySurface};
use super::{
    AgeRange, AnnualShape, Country, DataError, Gender, Provenance, YearRange, MAX_RECORDED_AGE,
};

const HEADER: [&str; 6] = ["country", "year", "gender", "age", "deaths", "exposure"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sourced {
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FragmentCell {
    pub deaths: Option<Sourced>,
    pub exposure: Option<Sourced>,
}

type Key = (Country, Gender, i32, u32);

/// Sparse store of individual-age cells keyed by (country, gender, year, age).
///
/// Deaths and exposures are tracked separately so that a year can take its
/// deaths from one source and its exposures from another.
#[derive(Debug, Clone, Default)]
pub struct SurfaceFragment {
    cells: BTreeMap<Key, FragmentCell>,
}

impl SurfaceFragment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, country: &Country, gender: Gender, age: u32, year: i32) -> Option<&FragmentCell> {
        self.cells.get(&(country.clone(), gender, year, age))
    }

    pub fn iter(&self) -> impl Iterator<Item = ((&Country, Gender, i32, u32), &FragmentCell)> {
        self.cells.iter().map(|((c, g, t, x), v)| ((c, *g, *t, *x), v))
    }

    pub fn insert_deaths(
        &mut self,
        country: &Country,
        gender: Gender,
        age: u32,
        year: i32,
        value: f64,
        provenance: Provenance,
    ) -> Result<(), DataError> {
        let cell = self.cells.entry((country.clone(), gender, year, age)).or_default();
        if cell.deaths.is_some() {
            return Err(DataError::DuplicateCell {
                country: country.to_string(),
                gender,
                age,
                year,
            });
        }
        cell.deaths = Some(Sourced { value, provenance });
        Ok(())
    }

    pub fn insert_exposure(
        &mut self,
        country: &Country,
        gender: Gender,
        age: u32,
        year: i32,
        value: f64,
        provenance: Provenance,
    ) -> Result<(), DataError> {
        let cell = self.cells.entry((country.clone(), gender, year, age)).or_default();
        if cell.exposure.is_some() {
            return Err(DataError::DuplicateCell {
                country: country.to_string(),
                gender,
                age,
                year,
            });
        }
        cell.exposure = Some(Sourced { value, provenance });
        Ok(())
    }

    /// Union of two fragments. A quantity present in both for the same cell
    /// is an ambiguity and fails.
    pub fn merge(mut self, other: SurfaceFragment) -> Result<SurfaceFragment, DataError> {
        for ((c, g, t, x), cell) in other.cells {
            if let Some(d) = cell.deaths {
                self.insert_deaths(&c, g, x, t, d.value, d.provenance)?;
            }
            if let Some(e) = cell.exposure {
                self.insert_exposure(&c, g, x, t, e.value, e.provenance)?;
            }
        }
        Ok(self)
    }

    /// Keeps only the quantities for which `keep_deaths` / `keep_exposure`
    /// return true; cells left empty are dropped.
    pub fn filter(
        self,
        keep_deaths: impl Fn(&Country, i32) -> bool,
        keep_exposure: impl Fn(&Country, i32) -> bool,
    ) -> SurfaceFragment {
        let cells = self
            .cells
            .into_iter()
            .filter_map(|(k, mut cell)| {
                if !keep_deaths(&k.0, k.2) {
                    cell.deaths = None;
                }
                if !keep_exposure(&k.0, k.2) {
                    cell.exposure = None;
                }
                (cell.deaths.is_some() || cell.exposure.is_some()).then_some((k, cell))
            })
            .collect();
        SurfaceFragment { cells }
    }

    /// Deaths for one (country, gender, year) over `ages`, if every age is present.
    pub fn deaths_curve(&self, country: &Country, gender: Gender, year: i32, ages: AgeRange) -> Option<Vec<f64>> {
        ages.iter()
            .map(|x| self.get(country, gender, x, year)?.deaths.map(|s| s.value))
            .collect()
    }

    pub fn exposure_curve(&self, country: &Country, gender: Gender, year: i32, ages: AgeRange) -> Option<Vec<f64>> {
        ages.iter()
            .map(|x| self.get(country, gender, x, year)?.exposure.map(|s| s.value))
            .collect()
    }

    /// Sum of deaths at ages `>= from_age` for one year, over whatever ages are present.
    pub fn deaths_from_age(&self, country: &Country, gender: Gender, year: i32, from_age: u32) -> f64 {
        (from_age..=MAX_RECORDED_AGE)
            .filter_map(|x| self.get(country, gender, x, year)?.deaths.map(|s| s.value))
            .sum()
    }

    /// Highest age with a recorded exposure in the given year.
    pub fn top_exposure_age(&self, country: &Country, gender: Gender, year: i32) -> Option<u32> {
        (0..=MAX_RECORDED_AGE)
            .rev()
            .find(|&x| self.get(country, gender, x, year).is_some_and(|c| c.exposure.is_some()))
    }

    /// Assembles a complete rectangular surface; any missing quantity fails loudly.
    pub fn to_surface(
        &self,
        country: &Country,
        gender: Gender,
        ages: AgeRange,
        years: YearRange,
    ) -> Result<MortalitySurface, DataError> {
        let mut deaths = AgeYearGrid::filled(ages, years, 0.0);
        let mut exposures = AgeYearGrid::filled(ages, years, 0.0);
        let mut provenance = Vec::with_capacity(ages.len() * years.len());
        for (i, x) in ages.iter().enumerate() {
            for (j, t) in years.iter().enumerate() {
                let missing = |quantity| DataError::MissingCell {
                    country: country.to_string(),
                    gender,
                    quantity,
                    age: x,
                    year: t,
                };
                let cell = self.get(country, gender, x, t);
                let d = cell.and_then(|c| c.deaths).ok_or_else(|| missing("deaths"))?;
                let e = cell.and_then(|c| c.exposure).ok_or_else(|| missing("exposure"))?;
                *deaths.at_mut(i, j) = d.value;
                *exposures.at_mut(i, j) = e.value;
                provenance.push(CellProvenance {
                    deaths: d.provenance,
                    exposure: e.provenance,
                });
            }
        }
        MortalitySurface::new(country.clone(), gender, deaths, exposures, provenance)
    }
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    path: &str,
    line: u64,
) -> Result<T, DataError> {
    let raw = record.get(idx).ok_or_else(|| DataError::Parse {
        path: path.into(),
        line,
        message: format!("missing field `{name}`"),
    })?;
    raw.trim().parse().map_err(|_| DataError::Parse {
        path: path.into(),
        line,
        message: format!("cannot parse `{name}` from `{raw}`"),
    })
}

/// Reads an HMD/EURO/STATBEL-shaped file. An optional trailing `provenance`
/// column overrides the shape's provenance label.
pub fn load_individual_age_csv(path: &Path, shape: AnnualShape) -> Result<SurfaceFragment, DataError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: p.clone(),
        source,
    })?;
    read_individual(file, &p, shape)
}

pub(crate) fn read_individual<R: std::io::Read>(
    reader: R,
    p: &str,
    shape: AnnualShape,
) -> Result<SurfaceFragment, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Parse {
        path: p.into(),
        line: 1,
        message: e.to_string(),
    })?;
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    let has_prov = cols.len() == 7 && cols[6] == "provenance";
    if cols[..cols.len().min(6)] != HEADER || !(cols.len() == 6 || has_prov) {
        return Err(DataError::Parse {
            path: p.into(),
            line: 1,
            message: format!("expected header `{}[,provenance]`", HEADER.join(",")),
        });
    }
    let mut out = SurfaceFragment::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Parse {
            path: p.into(),
            line: e.position().map_or(0, |pos| pos.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |pos| pos.line());
        let country = Country::new(rec.get(0).unwrap_or_default());
        let year: i32 = parse_field(&rec, 1, "year", p, line)?;
        let gender: Gender = rec
            .get(2)
            .unwrap_or_default()
            .parse()
            .map_err(|_| DataError::Parse {
                path: p.into(),
                line,
                message: format!("bad gender `{}`", rec.get(2).unwrap_or_default()),
            })?;
        let age: u32 = parse_field(&rec, 3, "age", p, line)?;
        let deaths: f64 = parse_field(&rec, 4, "deaths", p, line)?;
        let exposure: f64 = parse_field(&rec, 5, "exposure", p, line)?;
        let provenance = if has_prov {
            rec.get(6)
                .unwrap_or_default()
                .parse()
                .map_err(|e: DataError| DataError::Parse {
                    path: p.into(),
                    line,
                    message: e.to_string(),
                })?
        } else {
            shape.provenance()
        };
        if age > MAX_RECORDED_AGE {
            return Err(DataError::Validation(format!(
                "{p}:{line}: age {age} outside 0..={MAX_RECORDED_AGE}"
            )));
        }
        if !(deaths.is_finite() && deaths >= 0.0) {
            return Err(DataError::Validation(format!("{p}:{line}: negative deaths {deaths}")));
        }
        if !(exposure.is_finite() && exposure > 0.0) {
            return Err(DataError::Validation(format!(
                "{p}:{line}: exposure {exposure} must be positive"
            )));
        }
        out.insert_deaths(&country, gender, age, year, deaths, provenance)?;
        out.insert_exposure(&country, gender, age, year, exposure, provenance)?;
    }
    Ok(out)
}

/// Writes cells holding both quantities in the individual-age shape, with a
/// trailing provenance column (the exposure's label).
pub fn write_individual_age_csv(path: &Path, fragment: &SurfaceFragment) -> Result<(), DataError> {
    let p = path.display().to_string();
    let io = |source| DataError::Io { path: p.clone(), source };
    let mut f = std::io::BufWriter::new(File::create(path).map_err(io)?);
    writeln!(f, "{},provenance", HEADER.join(",")).map_err(io)?;
    for ((c, g, t, x), cell) in fragment.iter() {
        if let (Some(d), Some(e)) = (cell.deaths, cell.exposure) {
            writeln!(f, "{c},{t},{g},{x},{},{},{}", d.value, e.value, e.provenance).map_err(io)?;
        }
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn read(text: &str) -> Result<SurfaceFragment, DataError> {
        read_individual(text.as_bytes(), "mem.csv", AnnualShape::Hmd)
    }

    #[test]
    fn maps_row_fields() {
        let f = read("country,year,gender,age,deaths,exposure\nBEL,2019,M,65,812.0,52000.0\n").unwrap();
        let cell = f.get(&"BEL".into(), Gender::Male, 65, 2019).unwrap();
        assert_eq!(cell.deaths.unwrap().value, 812.0);
        assert_eq!(cell.exposure.unwrap().value, 52000.0);
        assert_eq!(cell.deaths.unwrap().provenance, Provenance::Hmd);
    }

    #[test]
    fn zero_exposure_is_rejected() {
        let err = read("country,year,gender,age,deaths,exposure\nBEL,2019,M,65,1,0\n").unwrap_err();
        assert!(matches!(err, DataError::Validation(_)), "{err}");
        let err = read("country,year,gender,age,deaths,exposure\nBEL,2019,M,65,-1,10\n").unwrap_err();
        assert!(matches!(err, DataError::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = read("country,year,gender,age,deaths,exposure\nBEL,2019,M,65,1,10\nBEL,2019,M,x,1,10\n")
            .unwrap_err();
        match err {
            DataError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        assert!(read("year,country\n").is_err());
    }

    #[test]
    fn merge_unions_key_sets_and_rejects_overlap() {
        let mut a = String::from("country,year,gender,age,deaths,exposure\n");
        let mut b = a.clone();
        for t in 1988..=2018 {
            for x in 0..3 {
                a.push_str(&format!("BEL,{t},F,{x},1,100\n"));
            }
        }
        for x in 0..3 {
            b.push_str(&format!("BEL,2019,F,{x},2,100\n"));
        }
        let fa = read(&a).unwrap();
        let fb = read_individual(b.as_bytes(), "b", AnnualShape::Euro).unwrap();
        let keys = |f: &SurfaceFragment| -> BTreeSet<(i32, u32)> { f.iter().map(|(k, _)| (k.2, k.3)).collect() };
        let expected: BTreeSet<_> = keys(&fa).union(&keys(&fb)).copied().collect();
        let merged = fa.clone().merge(fb.clone()).unwrap();
        assert_eq!(keys(&merged), expected);
        assert_eq!(
            merged.get(&"BEL".into(), Gender::Female, 1, 2019).unwrap().deaths.unwrap().provenance,
            Provenance::Euro
        );
        let surface = merged
            .to_surface(&"BEL".into(), Gender::Female, AgeRange::new(0, 2).unwrap(), YearRange::new(1988, 2019).unwrap())
            .unwrap();
        assert_eq!(surface.deaths().get(2, 2019), Some(2.0));
        assert!(fa.clone().merge(fa).is_err());
    }

    #[test]
    fn missing_cell_fails_surface_assembly() {
        let f = read("country,year,gender,age,deaths,exposure\nBEL,2019,M,0,1,10\n").unwrap();
        let err = f
            .to_surface(&"BEL".into(), Gender::Male, AgeRange::new(0, 1).unwrap(), YearRange::new(2019, 2019).unwrap())
            .unwrap_err();
        assert!(matches!(err, DataError::MissingCell { age: 1, .. }));
    }

    #[test]
    fn write_then_read_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let mut f = SurfaceFragment::new();
        let c = Country::new("NLD");
        f.insert_deaths(&c, Gender::Male, 3, 2020, 0.1 + 0.2, Provenance::Virtual).unwrap();
        f.insert_exposure(&c, Gender::Male, 3, 2020, 1.0 / 3.0, Provenance::Virtual).unwrap();
        write_individual_age_csv(&path, &f).unwrap();
        let back = load_individual_age_csv(&path, AnnualShape::Hmd).unwrap();
        let cell = back.get(&c, Gender::Male, 3, 2020).unwrap();
        assert_eq!(cell.deaths.unwrap().value, 0.1 + 0.2);
        assert_eq!(cell.exposure.unwrap().value, 1.0 / 3.0);
        assert_eq!(cell.exposure.unwrap().provenance, Provenance::Virtual);
    }
}
