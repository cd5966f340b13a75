use super::ProjectionError;

/// Expected fraction of the year survived, `(1 - e^-mu) / mu`, with limit 1 at 0.
#[inline]
fn lived_fraction(mu: f64) -> f64 {
    if mu == 0.0 {
        1.0
    } else if mu.is_infinite() {
        0.0
    } else {
        -(-mu).exp_m1() / mu
    }
}

/// Life expectancy along a sequence of one-year forces of mortality,
/// starting at the first element and truncated after the last.
fn life_expectancy(mu: impl Iterator<Item = f64>) -> f64 {
    let mut survival = 1.0;
    let mut e = 0.0;
    for m in mu {
        e += survival * lived_fraction(m);
        survival *= (-m).exp();
    }
    e
}

/// Period life expectancy at `age` for a curve of forces of mortality
/// starting at `first_age` and ending at the closing age.
pub fn period_life_expectancy(mu: &[f64], first_age: u32, age: u32) -> f64 {
    life_expectancy(mu[(age - first_age) as usize..].iter().copied())
}

/// Cohort life expectancy at `age` in `year`, following the diagonal of
/// `curves`, which holds one closed curve per year from `first_year`.
pub fn cohort_life_expectancy(
    curves: &[Vec<f64>],
    first_year: i32,
    first_age: u32,
    age: u32,
    year: i32,
) -> Result<f64, ProjectionError> {
    let top = first_age as usize + curves.first().map_or(0, Vec::len) - 1;
    let steps = top - age as usize;
    let needed = year + steps as i32;
    let horizon = first_year + curves.len() as i32 - 1;
    if needed > horizon || year < first_year {
        return Err(ProjectionError::ShortHorizon {
            age,
            year,
            needed,
            horizon,
        });
    }
    let j0 = (year - first_year) as usize;
    let i0 = (age - first_age) as usize;
    Ok(life_expectancy((0..=steps).map(|k| curves[j0 + k][i0 + k])))
}

/// Linear interpolation between order statistics (`sorted` ascending).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantiles(values: &[f64], probes: &[f64]) -> Result<Vec<f64>, ProjectionError> {
    if values.len() < 2 {
        return Err(ProjectionError::TooFewValues(values.len()));
    }
    if let Some(&p) = probes.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(ProjectionError::Probe(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(probes.iter().map(|&p| quantile(&sorted, p)).collect())
}
