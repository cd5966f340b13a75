//! Poisson maximum likelihood for log-bilinear surfaces
//! `ln mu[x,t] = offset[x,t] + a[x] + b[x] * k[t]`.
//!
//! Cyclic safeguarded Newton sweeps (one concave 1-D problem per coordinate,
//! step-halved until the likelihood does not decrease) followed by a
//! constrained full-Newton polish on the bordered Hessian.

use nalgebra::{DMatrix, DVector};

use super::LiLeeError;
use crate::data::AgeYearGrid;

/// Identification of the period index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum PeriodConstraint {
    /// `sum_t k[t] = 0`, level shift absorbed into `a`.
    SumToZero,
    /// `k[anchor] = 0`, never updated.
    Anchored(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Stop once the relative log-likelihood gain of a sweep drops below this.
    pub rel_tol: f64,
    pub max_sweeps: usize,
    pub max_polish_steps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            rel_tol: 1e-10,
            max_sweeps: 10_000,
            max_polish_steps: 25,
        }
    }
}

/// Iteration diagnostics for one bilinear fit.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct FitDiagnostics {
    pub sweeps: usize,
    pub polish_steps: usize,
    /// Log-likelihood after initialization and after every sweep and polish step.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BilinearFit {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k: Vec<f64>,
    pub loglik: f64,
    pub diagnostics: FitDiagnostics,
}

pub(crate) struct BilinearProblem<'a> {
    pub deaths: &'a AgeYearGrid,
    pub exposures: &'a AgeYearGrid,
    /// Per-cell log offset, age-major like the grids.
    pub offset: Option<&'a [f64]>,
    /// `Some` fixes the level `a` to the given values.
    pub fixed_level: Option<&'a [f64]>,
    pub period: PeriodConstraint,
}

/// `sum d ln mu - E mu` given a log-rate lookup.
pub fn poisson_loglik(deaths: &AgeYearGrid, exposures: &AgeYearGrid, log_mu: impl Fn(usize, usize) -> f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..deaths.n_ages() {
        for j in 0..deaths.n_years() {
            let eta = log_mu(i, j);
            ll += deaths.at(i, j) * eta - exposures.at(i, j) * eta.exp();
        }
    }
    ll
}

/// Log-likelihood of the per-cell saturated model `mu = d / E`.
pub fn saturated_loglik(deaths: &AgeYearGrid, exposures: &AgeYearGrid) -> f64 {
    let mut ll = 0.0;
    for i in 0..deaths.n_ages() {
        for j in 0..deaths.n_years() {
            let d = deaths.at(i, j);
            if d > 0.0 {
                ll += d * (d / exposures.at(i, j)).ln() - d;
            }
        }
    }
    ll
}

struct State<'p, 'a> {
    p: &'p BilinearProblem<'a>,
    nx: usize,
    nt: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    k: Vec<f64>,
}

impl State<'_, '_> {
    #[inline]
    fn off(&self, i: usize, j: usize) -> f64 {
        self.p.offset.map_or(0.0, |o| o[i * self.nt + j])
    }

    #[inline]
    fn eta(&self, i: usize, j: usize) -> f64 {
        self.off(i, j) + self.a[i] + self.b[i] * self.k[j]
    }

    #[inline]
    fn cell_ll(&self, i: usize, j: usize, eta: f64) -> f64 {
        self.p.deaths.at(i, j) * eta - self.p.exposures.at(i, j) * eta.exp()
    }

    fn loglik(&self) -> f64 {
        poisson_loglik(self.p.deaths, self.p.exposures, |i, j| self.eta(i, j))
    }

    fn row_ll(&self, i: usize, a: f64, b: f64) -> f64 {
        (0..self.nt)
            .map(|j| self.cell_ll(i, j, self.off(i, j) + a + b * self.k[j]))
            .sum()
    }

    fn col_ll(&self, j: usize, k: f64) -> f64 {
        (0..self.nx)
            .map(|i| self.cell_ll(i, j, self.off(i, j) + self.a[i] + self.b[i] * k))
            .sum()
    }

    fn level_free(&self) -> bool {
        self.p.fixed_level.is_none()
    }

    fn k_free(&self, j: usize) -> bool {
        !matches!(self.p.period, PeriodConstraint::Anchored(anchor) if anchor == j)
    }

    /// One 1-D concave Newton step with halving. `f` is the partial
    /// log-likelihood as a function of the coordinate.
    fn newton_1d(current: f64, grad: f64, hess: f64, f: impl Fn(f64) -> f64) -> f64 {
        if !(hess > 0.0) || !grad.is_finite() {
            return current;
        }
        let base = f(current);
        let mut step = grad / hess;
        for _ in 0..60 {
            let cand = current + step;
            let v = f(cand);
            if v.is_finite() && v >= base {
                return cand;
            }
            step *= 0.5;
        }
        current
    }

    fn sweep(&mut self) {
        if self.level_free() {
            for i in 0..self.nx {
                let (mut g, mut h) = (0.0, 0.0);
                for j in 0..self.nt {
                    let w = self.p.exposures.at(i, j) * self.eta(i, j).exp();
                    g += self.p.deaths.at(i, j) - w;
                    h += w;
                }
                let b = self.b[i];
                self.a[i] = Self::newton_1d(self.a[i], g, h, |a| self.row_ll(i, a, b));
            }
        }
        for j in 0..self.nt {
            if !self.k_free(j) {
                continue;
            }
            let (mut g, mut h) = (0.0, 0.0);
            for i in 0..self.nx {
                let w = self.p.exposures.at(i, j) * self.eta(i, j).exp();
                g += (self.p.deaths.at(i, j) - w) * self.b[i];
                h += w * self.b[i] * self.b[i];
            }
            self.k[j] = Self::newton_1d(self.k[j], g, h, |k| self.col_ll(j, k));
        }
        for i in 0..self.nx {
            let (mut g, mut h) = (0.0, 0.0);
            for j in 0..self.nt {
                let w = self.p.exposures.at(i, j) * self.eta(i, j).exp();
                g += (self.p.deaths.at(i, j) - w) * self.k[j];
                h += w * self.k[j] * self.k[j];
            }
            let a = self.a[i];
            self.b[i] = Self::newton_1d(self.b[i], g, h, |b| self.row_ll(i, a, b));
        }
        self.normalize();
    }

    /// Re-imposes the identification constraints without changing any rate.
    fn normalize(&mut self) {
        if let PeriodConstraint::SumToZero = self.p.period {
            let mean = self.k.iter().sum::<f64>() / self.nt as f64;
            if self.level_free() {
                for (a, b) in self.a.iter_mut().zip(&self.b) {
                    *a += b * mean;
                }
            }
            for k in &mut self.k {
                *k -= mean;
            }
        }
        let norm = self.b.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            for b in &mut self.b {
                *b /= norm;
            }
            for k in &mut self.k {
                *k *= norm;
            }
        }
        if self.b.iter().sum::<f64>() < 0.0 {
            for b in &mut self.b {
                *b = -*b;
            }
            for k in &mut self.k {
                *k = -*k;
            }
        }
        if let PeriodConstraint::Anchored(anchor) = self.p.period {
            self.k[anchor] = 0.0;
        }
    }

    fn free_k(&self) -> Vec<usize> {
        (0..self.nt).filter(|&j| self.k_free(j)).collect()
    }

    /// Gradient over the free parameters (a if free, b, free k).
    fn gradient(&self) -> DVector<f64> {
        let (nx, nt) = (self.nx, self.nt);
        let fk = self.free_k();
        let na = if self.level_free() { nx } else { 0 };
        let mut g = DVector::zeros(na + nx + fk.len());
        let mut gk = vec![0.0; nt];
        for i in 0..nx {
            for j in 0..nt {
                let r = self.p.deaths.at(i, j) - self.p.exposures.at(i, j) * self.eta(i, j).exp();
                if na > 0 {
                    g[i] += r;
                }
                g[na + i] += r * self.k[j];
                gk[j] += r * self.b[i];
            }
        }
        for (m, &j) in fk.iter().enumerate() {
            g[na + nx + m] = gk[j];
        }
        g
    }

    /// One constrained Newton step on all free parameters; returns whether
    /// the likelihood improved.
    fn polish_step(&mut self) -> bool {
        let (nx, nt) = (self.nx, self.nt);
        let fk = self.free_k();
        let na = if self.level_free() { nx } else { 0 };
        let p = na + nx + fk.len();
        let sum_zero = matches!(self.p.period, PeriodConstraint::SumToZero);
        let nc = 1 + sum_zero as usize;
        let mut kkt = DMatrix::<f64>::zeros(p + nc, p + nc);
        let mut kpos = vec![usize::MAX; nt];
        for (m, &j) in fk.iter().enumerate() {
            kpos[j] = na + nx + m;
        }
        for i in 0..nx {
            for j in 0..nt {
                let w = self.p.exposures.at(i, j) * self.eta(i, j).exp();
                let r = self.p.deaths.at(i, j) - w;
                let (bi, kj) = (self.b[i], self.k[j]);
                let ib = na + i;
                if na > 0 {
                    kkt[(i, i)] -= w;
                    kkt[(i, ib)] -= w * kj;
                    kkt[(ib, i)] -= w * kj;
                }
                kkt[(ib, ib)] -= w * kj * kj;
                let ik = kpos[j];
                if ik != usize::MAX {
                    if na > 0 {
                        kkt[(i, ik)] -= w * bi;
                        kkt[(ik, i)] -= w * bi;
                    }
                    let cross = -w * bi * kj + r;
                    kkt[(ib, ik)] += cross;
                    kkt[(ik, ib)] += cross;
                    kkt[(ik, ik)] -= w * bi * bi;
                }
            }
        }
        // Linearized constraints: b . db = 0, and sum dk = 0 when applicable.
        for i in 0..nx {
            kkt[(p, na + i)] = self.b[i];
            kkt[(na + i, p)] = self.b[i];
        }
        if sum_zero {
            for m in 0..fk.len() {
                kkt[(p + 1, na + nx + m)] = 1.0;
                kkt[(na + nx + m, p + 1)] = 1.0;
            }
        }
        let g = self.gradient();
        let mut rhs = DVector::zeros(p + nc);
        for m in 0..p {
            rhs[m] = -g[m];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return false;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let before = self.loglik();
        let saved = (self.a.clone(), self.b.clone(), self.k.clone());
        let mut scale = 1.0;
        for _ in 0..30 {
            if na > 0 {
                for i in 0..nx {
                    self.a[i] = saved.0[i] + scale * sol[i];
                }
            }
            for i in 0..nx {
                self.b[i] = saved.1[i] + scale * sol[na + i];
            }
            for (m, &j) in fk.iter().enumerate() {
                self.k[j] = saved.2[j] + scale * sol[na + nx + m];
            }
            self.normalize();
            let after = self.loglik();
            if after.is_finite() && after > before {
                return true;
            }
            scale *= 0.5;
        }
        self.a = saved.0;
        self.b = saved.1;
        self.k = saved.2;
        false
    }
}

pub(crate) fn fit_bilinear(problem: &BilinearProblem<'_>, opts: &FitOptions) -> Result<BilinearFit, LiLeeError> {
    let (nx, nt) = (problem.deaths.n_ages(), problem.deaths.n_years());
    let ages = problem.deaths.ages();
    let a = match problem.fixed_level {
        Some(level) => level.to_vec(),
        None => {
            let mut a = Vec::with_capacity(nx);
            for i in 0..nx {
                let mut num = 0.0;
                let mut den = 0.0;
                for j in 0..nt {
                    num += problem.deaths.at(i, j);
                    let off = problem.offset.map_or(0.0, |o| o[i * nt + j]);
                    den += problem.exposures.at(i, j) * off.exp();
                }
                if !(num > 0.0) {
                    return Err(LiLeeError::ZeroDeathRow {
                        age: ages.min() + i as u32,
                    });
                }
                a.push((num / den).ln());
            }
            a
        }
    };
    let mut state = State {
        p: problem,
        nx,
        nt,
        a,
        b: vec![1.0 / (nx as f64).sqrt(); nx],
        k: vec![0.0; nt],
    };
    let mut diagnostics = FitDiagnostics::default();
    let mut ll = state.loglik();
    diagnostics.trace.push(ll);
    let mut converged = false;
    while diagnostics.sweeps < opts.max_sweeps {
        state.sweep();
        diagnostics.sweeps += 1;
        let next = state.loglik();
        diagnostics.trace.push(next);
        let gain = (next - ll) / ll.abs().max(f64::MIN_POSITIVE);
        ll = next;
        if gain < opts.rel_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LiLeeError::NonConvergence {
            sweeps: diagnostics.sweeps,
            loglik: ll,
            a: state.a,
            b: state.b,
            k: state.k,
        });
    }
    for _ in 0..opts.max_polish_steps {
        if !state.polish_step() {
            break;
        }
        diagnostics.polish_steps += 1;
        diagnostics.trace.push(state.loglik());
    }
    let loglik = state.loglik();
    Ok(BilinearFit {
        a: state.a,
        b: state.b,
        k: state.k,
        loglik,
        diagnostics,
    })
}

/// Analytic gradient of the log-likelihood with respect to every `a`, `b`
/// and `k` coordinate (no constraint elimination).
pub(crate) fn full_gradient(
    deaths: &AgeYearGrid,
    exposures: &AgeYearGrid,
    offset: Option<&[f64]>,
    a: &[f64],
    b: &[f64],
    k: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (nx, nt) = (a.len(), k.len());
    let mut ga = vec![0.0; nx];
    let mut gb = vec![0.0; nx];
    let mut gk = vec![0.0; nt];
    for i in 0..nx {
        for j in 0..nt {
            let eta = offset.map_or(0.0, |o| o[i * nt + j]) + a[i] + b[i] * k[j];
            let r = deaths.at(i, j) - exposures.at(i, j) * eta.exp();
            ga[i] += r;
            gb[i] += r * k[j];
            gk[j] += r * b[i];
        }
    }
    (ga, gb, gk)
}
