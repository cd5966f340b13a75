//! Long-format parameter table `param,gender,index,value`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{LiLeeError, LiLeeParams, ModelKind, PopulationParams};
use crate::data::{AgeRange, DataError, Gender, YearRange};

const NAMES: [&str; 6] = ["A", "B", "K", "alpha", "beta", "kappa"];

fn io_err(path: &Path, source: std::io::Error) -> LiLeeError {
    LiLeeError::Data(DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes every parameter with 17 significant digits, which round-trips f64.
pub fn write_params<W: Write>(mut out: W, params: &LiLeeParams) -> std::io::Result<()> {
    writeln!(out, "param,gender,index,value")?;
    for (gender, p) in &params.populations {
        let ages: Vec<i64> = params.ages.iter().map(i64::from).collect();
        let years: Vec<i64> = params.years.iter().map(i64::from).collect();
        let blocks: [(&str, &[f64], &[i64]); 6] = [
            (NAMES[0], &p.a, &ages),
            (NAMES[1], &p.b, &ages),
            (NAMES[2], &p.k, &years),
            (NAMES[3], &p.alpha, &ages),
            (NAMES[4], &p.beta, &ages),
            (NAMES[5], &p.kappa, &years),
        ];
        for (name, values, index) in blocks {
            for (v, ix) in values.iter().zip(index) {
                writeln!(out, "{name},{},{ix},{v:.16e}", gender.code())?;
            }
        }
    }
    Ok(())
}

pub fn write_params_csv(path: &Path, params: &LiLeeParams) -> Result<(), LiLeeError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    write_params(&mut out, params).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

type Entries = BTreeMap<(Gender, usize), BTreeMap<i64, f64>>;

/// Reads a parameter table; age and year ranges are recovered from the indices.
pub fn read_params<R: Read>(input: R, kind: ModelKind) -> Result<LiLeeParams, LiLeeError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| LiLeeError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["param", "gender", "index", "value"] {
        return Err(LiLeeError::Parse {
            line: 1,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut entries: Entries = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| LiLeeError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| LiLeeError::Parse { line, message };
        let param = NAMES
            .iter()
            .position(|n| *n == &record[0])
            .ok_or_else(|| bad(format!("unknown parameter `{}`", &record[0])))?;
        let gender: Gender = record[1].parse().map_err(|_| bad(format!("bad gender `{}`", &record[1])))?;
        let index: i64 = record[2].parse().map_err(|_| bad(format!("bad index `{}`", &record[2])))?;
        let value: f64 = record[3].parse().map_err(|_| bad(format!("bad value `{}`", &record[3])))?;
        if entries.entry((gender, param)).or_default().insert(index, value).is_some() {
            return Err(bad(format!("duplicate {} {} {}", &record[0], gender, index)));
        }
    }
    let mut ages = None;
    let mut years = None;
    let mut populations = BTreeMap::new();
    for gender in Gender::BOTH {
        if !(0..6).any(|p| entries.contains_key(&(gender, p))) {
            continue;
        }
        let mut blocks = Vec::with_capacity(6);
        for (p, name) in NAMES.iter().enumerate() {
            let block = entries.remove(&(gender, p)).ok_or_else(|| LiLeeError::Parse {
                line: 0,
                message: format!("missing parameter {name} for {gender}"),
            })?;
            let first = *block.keys().next().unwrap();
            let last = *block.keys().next_back().unwrap();
            if (last - first + 1) as usize != block.len() {
                return Err(LiLeeError::Parse {
                    line: 0,
                    message: format!("non-contiguous index for {name} {gender}"),
                });
            }
            let span = (first, last);
            let slot = if matches!(p, 2 | 5) { &mut years } else { &mut ages };
            match slot {
                None => *slot = Some(span),
                Some(s) if *s != span => {
                    return Err(LiLeeError::Parse {
                        line: 0,
                        message: format!("index range of {name} {gender} disagrees with other parameters"),
                    })
                }
                Some(_) => {}
            }
            blocks.push(block.into_values().collect::<Vec<f64>>());
        }
        let mut it = blocks.into_iter();
        let mut next = || it.next().unwrap();
        populations.insert(
            gender,
            PopulationParams {
                a: next(),
                b: next(),
                k: next(),
                alpha: next(),
                beta: next(),
                kappa: next(),
            },
        );
    }
    let (Some(ages), Some(years)) = (ages, years) else {
        return Err(LiLeeError::Parse {
            line: 0,
            message: "empty parameter table".into(),
        });
    };
    let to_u32 = |v: i64| {
        u32::try_from(v).map_err(|_| LiLeeError::Parse {
            line: 0,
            message: format!("negative age index {v}"),
        })
    };
    let to_i32 = |v: i64| {
        i32::try_from(v).map_err(|_| LiLeeError::Parse {
            line: 0,
            message: format!("year index {v} out of range"),
        })
    };
    Ok(LiLeeParams {
        kind,
        ages: AgeRange::new(to_u32(ages.0)?, to_u32(ages.1)?)?,
        years: YearRange::new(to_i32(years.0)?, to_i32(years.1)?)?,
        populations,
    })
}

pub fn read_params_csv(path: &Path, kind: ModelKind) -> Result<LiLeeParams, LiLeeError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_params(file, kind)
}
