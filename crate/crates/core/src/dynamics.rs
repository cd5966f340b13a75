//! Joint random-walk-with-drift / AR(1) dynamics of the four period effects
//! `(K^M, kappa^M, K^F, kappa^F)` estimated by weighted Gaussian likelihood.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix4, Matrix6, SMatrix, Vector4, Vector6};
use serde::Serialize;
use thiserror::Error;

use crate::data::{Gender, YearRange};
use crate::lilee::LiLeeParams;

pub type DesignMatrix = SMatrix<f64, 4, 6>;

/// Smallest admissible total weight: six mean parameters plus one.
pub const MIN_EFFECTIVE_SAMPLE: f64 = 7.0;

const REL_TOL: f64 = 1e-12;
const PSI_TOL: f64 = 1e-13;
const MAX_ITER: usize = 10_000;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("effective sample {0} is below {MIN_EFFECTIVE_SAMPLE}")]
    InsufficientSample(f64),
    #[error("weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("{weights} weights for {rows} observation rows")]
    LengthMismatch { rows: usize, weights: usize },
    #[error("period effect series lengths differ")]
    RaggedSeries,
    #[error("design is rank deficient (constant lagged country effect?)")]
    SingularDesign,
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("no convergence after {0} iterations")]
    NonConvergence(usize),
}

/// Period effects of both genders over a common calibration period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodEffectSeries {
    pub years: YearRange,
    pub k_male: Vec<f64>,
    pub kappa_male: Vec<f64>,
    pub k_female: Vec<f64>,
    pub kappa_female: Vec<f64>,
}

impl PeriodEffectSeries {
    pub fn new(
        years: YearRange,
        k_male: Vec<f64>,
        kappa_male: Vec<f64>,
        k_female: Vec<f64>,
        kappa_female: Vec<f64>,
    ) -> Result<Self, DynamicsError> {
        let n = years.len();
        if [&k_male, &kappa_male, &k_female, &kappa_female]
            .iter()
            .any(|v| v.len() != n)
        {
            return Err(DynamicsError::RaggedSeries);
        }
        Ok(PeriodEffectSeries {
            years,
            k_male,
            kappa_male,
            k_female,
            kappa_female,
        })
    }

    pub fn from_params(params: &LiLeeParams) -> Result<Self, DynamicsError> {
        let m = params.population(Gender::Male).ok_or(DynamicsError::RaggedSeries)?;
        let f = params.population(Gender::Female).ok_or(DynamicsError::RaggedSeries)?;
        Self::new(
            params.years,
            m.k.clone(),
            m.kappa.clone(),
            f.k.clone(),
            f.kappa.clone(),
        )
    }

    /// `(K^M, kappa^M, K^F, kappa^F)` in the final year.
    pub fn jump_off(&self) -> [f64; 4] {
        let n = self.years.len() - 1;
        [self.k_male[n], self.kappa_male[n], self.k_female[n], self.kappa_female[n]]
    }

    /// Series restricted to the first `len` years.
    pub fn truncated(&self, len: usize) -> Self {
        PeriodEffectSeries {
            years: YearRange::new(self.years.first(), self.years.first() + len as i32 - 1)
                .expect("truncation keeps at least one year"),
            k_male: self.k_male[..len].to_vec(),
            kappa_male: self.kappa_male[..len].to_vec(),
            k_female: self.k_female[..len].to_vec(),
            kappa_female: self.kappa_female[..len].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    pub year: i32,
    pub y: Vector4<f64>,
    pub x: DesignMatrix,
}

/// One row per year after the first: increments of `K`, levels of `kappa`,
/// regressed on the lagged `kappa`.
pub fn build_design(series: &PeriodEffectSeries) -> Vec<ObservationRow> {
    (1..series.years.len())
        .map(|j| {
            let y = Vector4::new(
                series.k_male[j] - series.k_male[j - 1],
                series.kappa_male[j],
                series.k_female[j] - series.k_female[j - 1],
                series.kappa_female[j],
            );
            let mut x = DesignMatrix::zeros();
            x[(0, 0)] = 1.0;
            x[(1, 1)] = 1.0;
            x[(1, 2)] = series.kappa_male[j - 1];
            x[(2, 3)] = 1.0;
            x[(3, 4)] = 1.0;
            x[(3, 5)] = series.kappa_female[j - 1];
            ObservationRow {
                year: series.years.first() + j as i32,
                y,
                x,
            }
        })
        .collect()
}

/// Unit weights except `w_last` on the final row.
pub fn last_year_weights(rows: usize, w_last: f64) -> Vec<f64> {
    let mut w = vec![1.0; rows];
    if let Some(last) = w.last_mut() {
        *last = w_last;
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeriesFit {
    /// `(theta^M, c^M, phi^M, theta^F, c^F, phi^F)`.
    pub psi: [f64; 6],
    pub std_errors: [f64; 6],
    /// Row-major 4x4 covariance of `(eps^M, delta^M, eps^F, delta^F)`.
    pub covariance: [[f64; 4]; 4],
    pub weights: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub ridge_applied: bool,
}

impl TimeSeriesFit {
    fn offset(gender: Gender) -> usize {
        match gender {
            Gender::Male => 0,
            Gender::Female => 3,
        }
    }

    pub fn theta(&self, gender: Gender) -> f64 {
        self.psi[Self::offset(gender)]
    }

    pub fn intercept(&self, gender: Gender) -> f64 {
        self.psi[Self::offset(gender) + 1]
    }

    pub fn phi(&self, gender: Gender) -> f64 {
        self.psi[Self::offset(gender) + 2]
    }

    /// Whether the country AR(1) is stationary; `phi` is never clamped.
    pub fn is_stationary(&self, gender: Gender) -> bool {
        self.phi(gender).abs() < 1.0
    }

    pub fn psi_vector(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.psi)
    }

    pub fn covariance_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.covariance[i][j])
    }
}

fn check_weights(rows: &[ObservationRow], weights: &[f64]) -> Result<f64, DynamicsError> {
    if rows.len() != weights.len() {
        return Err(DynamicsError::LengthMismatch {
            rows: rows.len(),
            weights: weights.len(),
        });
    }
    if let Some(&w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(DynamicsError::InvalidWeight(w));
    }
    Ok(weights.iter().sum())
}

/// Weighted Gaussian log-likelihood
/// `-1/2 sum w_t (4 ln 2pi + ln|C| + r_t' C^-1 r_t)` with `r_t = Y_t - X_t psi`.
pub fn loglik(psi: &Vector6<f64>, c: &Matrix4<f64>, rows: &[ObservationRow], weights: &[f64]) -> Result<f64, DynamicsError> {
    check_weights(rows, weights)?;
    let chol = c.cholesky().ok_or(DynamicsError::NotPositiveDefinite)?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut ll = 0.0;
    for (row, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let r = row.y - row.x * psi;
        let quad = r.dot(&chol.solve(&r));
        ll += w * (4.0 * (2.0 * PI).ln() + log_det + quad);
    }
    Ok(-0.5 * ll)
}

/// Weighted GLS estimate of `psi` and the inverse information matrix for a fixed `C`.
fn gls(rows: &[ObservationRow], weights: &[f64], c_inv: &Matrix4<f64>) -> Result<(Vector6<f64>, Matrix6<f64>), DynamicsError> {
    let mut xtx = Matrix6::zeros();
    let mut xty = Vector6::zeros();
    for (row, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let xt_cinv = row.x.transpose() * c_inv;
        xtx += w * xt_cinv * row.x;
        xty += w * xt_cinv * row.y;
    }
    let inv = xtx.try_inverse().ok_or(DynamicsError::SingularDesign)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::SingularDesign);
    }
    Ok((inv * xty, inv))
}

fn moment(rows: &[ObservationRow], weights: &[f64], psi: &Vector6<f64>, total: f64) -> Matrix4<f64> {
    let mut c = Matrix4::zeros();
    for (row, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let r = row.y - row.x * psi;
        c += w * r * r.transpose();
    }
    c / total
}

/// Returns `C` (ridged if necessary) and its inverse.
fn regularize(c: Matrix4<f64>, ridged: &mut bool) -> Result<(Matrix4<f64>, Matrix4<f64>), DynamicsError> {
    if let Some(ch) = c.cholesky() {
        return Ok((c, ch.inverse()));
    }
    let ridge = 1e-12 * c.trace().max(f64::MIN_POSITIVE);
    let c = c + Matrix4::identity() * ridge;
    log::warn!("singular residual covariance; adding ridge {ridge:e} to its diagonal");
    *ridged = true;
    let ch = c.cholesky().ok_or(DynamicsError::NotPositiveDefinite)?;
    Ok((c, ch.inverse()))
}

/// Maximizes the weighted likelihood by alternating the closed-form GLS step
/// for `psi` and the weighted moment step for `C`.
pub fn fit_weighted_mle(rows: &[ObservationRow], weights: &[f64]) -> Result<TimeSeriesFit, DynamicsError> {
    let total = check_weights(rows, weights)?;
    if total < MIN_EFFECTIVE_SAMPLE {
        return Err(DynamicsError::InsufficientSample(total));
    }
    let mut ridged = false;
    let (mut psi, _) = gls(rows, weights, &Matrix4::identity())?;
    let (mut c, mut c_inv) = regularize(moment(rows, weights, &psi, total), &mut ridged)?;
    let mut ll = loglik(&psi, &c, rows, weights)?;
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > MAX_ITER {
            return Err(DynamicsError::NonConvergence(MAX_ITER));
        }
        let next_psi = gls(rows, weights, &c_inv)?.0;
        let step = (next_psi - psi).amax() / (1.0 + psi.amax());
        psi = next_psi;
        (c, c_inv) = regularize(moment(rows, weights, &psi, total), &mut ridged)?;
        let next = loglik(&psi, &c, rows, weights)?;
        let change = (next - ll).abs() / ll.abs().max(1.0);
        ll = next;
        // The likelihood flattens long before psi settles, so require both.
        if change < REL_TOL && step < PSI_TOL {
            break;
        }
    }
    let (_, info_inv) = gls(rows, weights, &c_inv)?;
    let mut std_errors = [0.0; 6];
    for (i, se) in std_errors.iter_mut().enumerate() {
        *se = info_inv[(i, i)].max(0.0).sqrt();
    }
    let mut covariance = [[0.0; 4]; 4];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = c[(i, j)];
        }
    }
    Ok(TimeSeriesFit {
        psi: psi.into(),
        std_errors,
        covariance,
        weights: weights.to_vec(),
        loglik: ll,
        iterations,
        ridge_applied: ridged,
    })
}

pub const PSI_NAMES: [&str; 6] = ["theta_M", "c_M", "phi_M", "theta_F", "c_F", "phi_F"];

/// `param,value` table: the six mean parameters, then `C_ij` for `i <= j` (1-based).
pub fn write_fit<W: Write>(mut out: W, fit: &TimeSeriesFit) -> std::io::Result<()> {
    writeln!(out, "param,value")?;
    for (name, v) in PSI_NAMES.iter().zip(fit.psi) {
        writeln!(out, "{name},{v:.16e}")?;
    }
    for i in 0..4 {
        for j in i..4 {
            writeln!(out, "C_{}{},{:.16e}", i + 1, j + 1, fit.covariance[i][j])?;
        }
    }
    Ok(())
}
