use std::collections::BTreeMap;

use super::*;
use crate::data::{AgeRange, YearRange};
use crate::lilee::{ModelKind, PopulationParams};

fn fit_with(psi: [f64; 6], c: [[f64; 4]; 4]) -> TimeSeriesFit {
    TimeSeriesFit {
        psi,
        std_errors: [0.0; 6],
        covariance: c,
        weights: vec![],
        loglik: 0.0,
        iterations: 0,
        ridge_applied: false,
    }
}

fn diag_cov(v: [f64; 4]) -> [[f64; 4]; 4] {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        c[i][i] = v[i];
    }
    c[0][2] = 0.5 * (v[0] * v[2]).sqrt();
    c[2][0] = c[0][2];
    c
}

fn spec(n: usize, horizon: i32, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        jump_off_year: 2020,
        horizon,
        n_paths: n,
        seed,
        jump_off: [-5.0, 0.2, -4.0, -0.1],
    }
}

fn gompertz_params() -> LiLeeParams {
    let ages = AgeRange::new(0, 90).unwrap();
    let pop = |shift: f64| PopulationParams {
        a: (0..=90).map(|x| -9.0 + 0.09 * x as f64 + shift).collect(),
        b: vec![1.0 / 91f64.sqrt(); 91],
        k: vec![0.0; 3],
        alpha: vec![0.01; 91],
        beta: vec![1.0 / 91f64.sqrt(); 91],
        kappa: vec![0.0; 3],
    };
    let mut populations = BTreeMap::new();
    populations.insert(Gender::Male, pop(0.0));
    populations.insert(Gender::Female, pop(-0.4));
    LiLeeParams {
        kind: ModelKind::LiLee,
        ages,
        years: YearRange::new(2018, 2020).unwrap(),
        populations,
    }
}

#[test]
fn zero_noise_paths_are_deterministic_drift() {
    let fit = fit_with([-0.2, 0.01, 0.9, -0.15, -0.02, 0.5], [[0.0; 4]; 4]);
    let paths = simulate_period_effects(&fit, &spec(3, 2030, 1)).unwrap();
    for i in 0..3 {
        for t in 2020..=2030 {
            let s = paths.state(i, t);
            let h = (t - 2020) as f64;
            assert!((s[0] - (-5.0 - 0.2 * h)).abs() < 1e-12);
            assert!((s[2] - (-4.0 - 0.15 * h)).abs() < 1e-12);
        }
    }
    assert_eq!(paths, {
        let mut c = central_path(&fit, &spec(1, 2030, 1)).unwrap();
        c.n_paths = 3;
        c.values = c.values.repeat(3);
        c
    });
}

#[test]
fn seeded_runs_are_bit_identical_across_thread_counts() {
    let fit = fit_with([-0.2, 0.01, 0.9, -0.15, -0.02, 0.5], diag_cov([0.04, 0.01, 0.03, 0.02]));
    let s = spec(257, 2060, 42);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| simulate_period_effects(&fit, &s).unwrap());
    let b = four.install(|| simulate_period_effects(&fit, &s).unwrap());
    assert_eq!(a, b);
    let c = simulate_period_effects(&fit, &ScenarioSpec { seed: 43, ..s }).unwrap();
    assert_ne!(a, c);
    for i in 0..a.n_paths() {
        assert_eq!(a.state(i, 2020), [-5.0, 0.2, -4.0, -0.1]);
    }
}

#[test]
fn monte_carlo_means_match_closed_form() {
    let psi = [-0.2, 0.01, 0.9, -0.15, -0.02, 0.5];
    let var = [0.04, 0.01, 0.03, 0.02];
    let fit = fit_with(psi, diag_cov(var));
    let n = 20_000;
    let paths = simulate_period_effects(&fit, &spec(n, 2045, 7)).unwrap();
    for h in [1, 5, 25] {
        let t = 2020 + h;
        let mean = |c: usize| (0..n).map(|i| paths.state(i, t)[c]).sum::<f64>() / n as f64;
        let hf = h as f64;
        let k_mean = -5.0 + hf * psi[0];
        let k_se = (var[0] * hf / n as f64).sqrt();
        assert!((mean(0) - k_mean).abs() < 4.0 * k_se);
        let phi_h = psi[2].powi(h);
        let ar_mean = psi[1] * (1.0 - phi_h) / (1.0 - psi[2]) + phi_h * 0.2;
        let ar_var = var[1] * (1.0 - psi[2].powi(2 * h)) / (1.0 - psi[2] * psi[2]);
        assert!((mean(1) - ar_mean).abs() < 4.0 * (ar_var / n as f64).sqrt());
    }
}

#[test]
fn rejects_indefinite_covariance_and_bad_specs() {
    let mut c = [[0.0; 4]; 4];
    c[0][0] = -1.0;
    assert!(matches!(
        simulate_period_effects(&fit_with([0.0; 6], c), &spec(2, 2021, 0)),
        Err(ProjectionError::Covariance)
    ));
    let fit = fit_with([0.0; 6], [[0.0; 4]; 4]);
    assert!(simulate_period_effects(&fit, &spec(2, 2020, 0)).is_err());
    assert!(simulate_period_effects(&fit, &spec(0, 2021, 0)).is_err());
}

#[test]
fn rate_link() {
    assert_eq!(mortality_rate(0.0), 0.0);
    assert!((mortality_rate(std::f64::consts::LN_2) - 0.5).abs() < 1e-16);
    assert!(mortality_rate(0.2) < mortality_rate(0.2000001));
}

fn logistic(x: u32) -> f64 {
    let z = 0.1 * (0.1 * (x as f64 - 80.0)).exp();
    z / (1.0 + z)
}

#[test]
fn kannisto_reproduces_exact_logistic() {
    let mu: Vec<f64> = (0..=90).map(logistic).collect();
    let closed = kannisto_close(&mu, 0).unwrap();
    assert_eq!(closed.mu.len(), 121);
    assert_eq!(&closed.mu[..91], &mu[..]);
    for x in 91..=120 {
        assert!((closed.mu_at(x) - logistic(x)).abs() < 1e-8);
    }
    assert!(closed.mu.iter().all(|&m| m < 1.0));
    assert!(closed.q().iter().all(|&q| q > 0.0 && q < 1.0));
}

#[test]
fn kannisto_constant_input_extrapolates_flat() {
    let mu = vec![0.2; 91];
    let closed = kannisto_close(&mu, 0).unwrap();
    assert!(closed.fit.slope.abs() < 1e-12);
    for x in 91..=120 {
        assert!((closed.mu_at(x) - 0.2).abs() < 1e-12);
    }
    assert!(kannisto_close(&mu[..80], 0).is_err());
}

#[test]
fn period_life_expectancy_closed_form() {
    for mu in [1e-4, 1e-3, 1e-2, 0.1, 1.0] {
        for age in [0u32, 65, 120] {
            let curve = vec![mu; 121];
            let n = ages_to_close(age) as f64;
            let expected = -(-n * mu).exp_m1() / mu;
            let e = period_life_expectancy(&curve, 0, age);
            assert!((e - expected).abs() < 1e-12 * expected.max(1.0), "{mu} {age}");
        }
    }
    assert_eq!(period_life_expectancy(&[0.0; 121], 0, 100), 21.0);
    let mut curve = vec![0.01; 121];
    curve[50] = f64::INFINITY;
    assert_eq!(period_life_expectancy(&curve, 0, 50), 0.0);
    curve[50] = 1e6;
    assert!(period_life_expectancy(&curve, 0, 50) < 1e-5);
}

#[test]
fn cohort_equals_period_on_time_constant_surface() {
    let curve: Vec<f64> = (0..=120).map(|x| (-9.0 + 0.09 * x as f64).exp()).collect();
    let surface = vec![curve.clone(); 121];
    for age in [0, 30, 65, 100] {
        assert_eq!(
            cohort_life_expectancy(&surface, 2020, 0, age, 2020).unwrap(),
            period_life_expectancy(&curve, 0, age)
        );
    }
    assert!(matches!(
        cohort_life_expectancy(&surface[..50], 2020, 0, 0, 2020),
        Err(ProjectionError::ShortHorizon { .. })
    ));
}

#[test]
fn improving_mortality_lifts_cohort_above_period() {
    let surface: Vec<Vec<f64>> = (0..150)
        .map(|j| (0..=120).map(|x| (-9.0 + 0.09 * x as f64 - 0.01 * j as f64).exp()).collect())
        .collect();
    for age in [0, 40, 65] {
        let coh = cohort_life_expectancy(&surface, 2020, 0, age, 2020).unwrap();
        assert!(coh >= period_life_expectancy(&surface[0], 0, age));
    }
}

#[test]
fn quantile_estimator() {
    assert_eq!(quantiles(&[3.0; 10], &[0.005, 0.5, 0.995]).unwrap(), vec![3.0; 3]);
    assert_eq!(quantiles(&[4.0, 1.0, 3.0, 2.0], &[0.0, 0.5, 1.0]).unwrap(), vec![1.0, 2.5, 4.0]);
    assert!(quantiles(&[1.0], &[0.5]).is_err());
    assert!(quantiles(&[1.0, 2.0], &[1.5]).is_err());
}

#[test]
fn fan_chart_layout_and_best_estimate() {
    let params = gompertz_params();
    let fit = fit_with([-0.2, 0.0, 0.9, -0.15, 0.0, 0.5], diag_cov([0.04, 0.01, 0.03, 0.02]));
    let s = ScenarioSpec {
        jump_off: [0.0; 4],
        ..spec(50, 2020 + 60, 3)
    };
    let paths = simulate_period_effects(&fit, &s).unwrap();
    let central = central_path(&fit, &s).unwrap();
    let config = FanConfig {
        probes: vec![0.995, 0.005, 0.5],
        ages: vec![65, 0],
        last_year: Some(2030),
    };
    let chart = fan_chart(&params, &paths, &central, &config).unwrap();
    let keys: Vec<_> = chart
        .rows
        .iter()
        .map(|r| (r.quantity, r.gender, r.age, r.year))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let coh_years: Vec<i32> = chart
        .rows
        .iter()
        .filter(|r| r.quantity == FanQuantity::CohortLifeExpectancy && r.gender == Gender::Male && r.age == Some(65) && r.probe == Probe::Best)
        .map(|r| r.year)
        .collect();
    assert_eq!(coh_years, (2020..=2025).collect::<Vec<_>>());
    for r in &chart.rows {
        if r.quantity == FanQuantity::PeriodLifeExpectancy {
            assert!(r.value > 0.0 && r.value <= 121.0 - r.age.unwrap() as f64);
        }
        if r.quantity == FanQuantity::Q {
            assert!(r.value > 0.0 && r.value < 1.0);
        }
    }
    for g in Gender::BOTH {
        let lo = chart.value(FanQuantity::Q, g, Some(65), 2030, Probe::Level(0.005)).unwrap();
        let mid = chart.value(FanQuantity::Q, g, Some(65), 2030, Probe::Level(0.5)).unwrap();
        let hi = chart.value(FanQuantity::Q, g, Some(65), 2030, Probe::Level(0.995)).unwrap();
        assert!(lo <= mid && mid <= hi);
        let best = chart.value(FanQuantity::K, g, None, 2030, Probe::Best).unwrap();
        let theta = if g == Gender::Male { -0.2 } else { -0.15 };
        assert!((best - 10.0 * theta).abs() < 1e-12);
        // Jump-off rates are identical across paths.
        let q0 = chart.value(FanQuantity::Q, g, Some(0), 2020, Probe::Level(0.005)).unwrap();
        let q1 = chart.value(FanQuantity::Q, g, Some(0), 2020, Probe::Level(0.995)).unwrap();
        assert_eq!(q0, q1);
    }
    let mut buf = Vec::new();
    write_fan_chart(&mut buf, &chart).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("quantity,gender,age,year,probe,value\nK,M,,2020,0.005,"));
}

#[test]
fn central_path_matches_deterministic_extrapolation() {
    let params = gompertz_params();
    let fit = fit_with([-0.2, 0.01, 0.9, -0.15, -0.02, 0.5], diag_cov([0.04, 0.01, 0.03, 0.02]));
    let s = spec(1, 2030, 0);
    let central = central_path(&fit, &s).unwrap();
    let q = paths_to_mortality(&params, &central, 0, 2030, Gender::Male).unwrap();
    let mut kappa = 0.2;
    for _ in 0..10 {
        kappa = 0.01 + 0.9 * kappa;
    }
    let k = -5.0 - 2.0;
    let p = params.population(Gender::Male).unwrap();
    for (i, qi) in q.iter().enumerate() {
        assert!((qi - mortality_rate(p.log_mu(i, k, kappa).exp())).abs() < 1e-15);
    }
}
