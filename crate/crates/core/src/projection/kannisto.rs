use super::ProjectionError;
use crate::data::MAX_AGE;

/// Ages whose logit forces of mortality determine the closure.
pub const KANNISTO_FIT_AGES: (u32, u32) = (80, 90);

const MU_CAP: f64 = 1.0 - 1e-12;

/// `logit(mu_x) = intercept + slope * (x - pivot)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KannistoFit {
    pub intercept: f64,
    pub slope: f64,
    pub pivot: u32,
}

impl KannistoFit {
    pub fn mu(&self, age: u32) -> f64 {
        let z = self.intercept + self.slope * (age as f64 - self.pivot as f64);
        1.0 / (1.0 + (-z).exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedCurve {
    pub first_age: u32,
    /// Forces of mortality for `first_age..=120`.
    pub mu: Vec<f64>,
    pub fit: KannistoFit,
}

impl ClosedCurve {
    pub fn q(&self) -> Vec<f64> {
        self.mu.iter().map(|&m| super::mortality_rate(m)).collect()
    }

    pub fn mu_at(&self, age: u32) -> f64 {
        self.mu[(age - self.first_age) as usize]
    }
}

/// Replaces ages above 90 by the logistic fitted on ages 80..=90. Model ages
/// are kept as given; they must run through exactly 90.
pub fn kannisto_close(mu: &[f64], first_age: u32) -> Result<ClosedCurve, ProjectionError> {
    let (lo, hi) = KANNISTO_FIT_AGES;
    let last = first_age + mu.len() as u32 - 1;
    if first_age > lo || last != hi {
        return Err(ProjectionError::ClosureWindow { first: first_age, last });
    }
    let window = &mu[(lo - first_age) as usize..];
    let mut clamped = false;
    let n = window.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (offset, &m) in window.iter().enumerate() {
        let m = if m >= 1.0 {
            clamped = true;
            MU_CAP
        } else {
            m
        };
        let x = offset as f64;
        let y = (m / (1.0 - m)).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    if clamped {
        log::warn!("force of mortality >= 1 in the closure window clamped to {MU_CAP}");
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let fit = KannistoFit {
        intercept: (sy - slope * sx) / n,
        slope,
        pivot: lo,
    };
    if !(fit.slope > 0.0) {
        log::warn!("closure logistic is not increasing in age (slope {})", fit.slope);
    }
    let mut closed = mu.to_vec();
    closed.extend((hi + 1..=MAX_AGE).map(|x| fit.mu(x)));
    Ok(ClosedCurve {
        first_age,
        mu: closed,
        fit,
    })
}
