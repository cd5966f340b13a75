//! Randomized invariants across the public API.

use mortkit::data::{derive_weekly_exposure, AgeRange, AgeYearGrid, YearRange};
use mortkit::dynamics::{build_design, fit_weighted_mle, last_year_weights, PeriodEffectSeries};
use mortkit::lilee::{fit_common_trend, saturated_loglik, FitOptions};
use mortkit::projection::{kannisto_close, mortality_rate, period_life_expectancy, simulate_period_effects, ScenarioSpec};
use mortkit::TimeSeriesFit;
use proptest::prelude::*;

fn gompertz_curve() -> impl Strategy<Value = Vec<f64>> {
    // Parameterized by the age-90 level so the closure window stays below 1.
    (0.05f64..0.6, 0.05f64..0.14, prop::collection::vec(0.8f64..1.25, 91)).prop_map(|(m90, b, noise)| {
        (0..=90)
            .map(|x| m90 * (b * (x as f64 - 90.0)).exp() * noise[x] + 1e-4)
            .collect()
    })
}

fn small_grid() -> impl Strategy<Value = (AgeYearGrid, AgeYearGrid)> {
    (2usize..6, 3usize..8).prop_flat_map(|(nx, nt)| {
        (
            prop::collection::vec(0.005f64..0.1, nx),
            prop::collection::vec(0.6f64..1.4, nx * nt),
            prop::collection::vec(1e3f64..1e5, nx * nt),
        )
            .prop_map(move |(level, noise, e)| {
                let ages = AgeRange::new(60, 60 + nx as u32 - 1).unwrap();
                let years = YearRange::new(2000, 2000 + nt as i32 - 1).unwrap();
                let ex = AgeYearGrid::from_fn(ages, years, |x, t| e[(x - 60) as usize * nt + (t - 2000) as usize]);
                let d = AgeYearGrid::from_fn(ages, years, |x, t| {
                    let (i, j) = ((x - 60) as usize, (t - 2000) as usize);
                    ex.at(i, j) * level[i] * (1.0 - 0.02 * j as f64) * noise[i * nt + j]
                });
                (d, ex)
            })
    })
}

fn series(n: usize, z: Vec<f64>) -> PeriodEffectSeries {
    let mut v = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for t in 1..n {
        let e = &z[4 * t..4 * t + 4];
        v[0][t] = v[0][t - 1] - 0.2 + 0.1 * e[0];
        v[1][t] = 0.7 * v[1][t - 1] + 0.05 * e[1];
        v[2][t] = v[2][t - 1] - 0.15 + 0.1 * (0.5 * e[0] + e[2]);
        v[3][t] = 0.9 * v[3][t - 1] + 0.05 * e[3];
    }
    let [km, am, kf, af] = v;
    PeriodEffectSeries::new(YearRange::new(2001, 2000 + n as i32).unwrap(), km, am, kf, af).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weekly_exposure_round_trips(d in 0.0f64..1e5, m in 1e-6f64..2.0) {
        let e = derive_weekly_exposure(d, m).unwrap();
        prop_assert!((e * m - d).abs() <= 1e-12 * d.max(1e-300));
    }

    #[test]
    fn closure_and_life_expectancy_stay_in_bounds(curve in gompertz_curve()) {
        let closed = kannisto_close(&curve, 0).unwrap();
        prop_assert_eq!(closed.mu.len(), 121);
        prop_assert!(closed.fit.slope >= 0.0);
        for &mu in &closed.mu {
            let q = mortality_rate(mu);
            prop_assert!(mu > 0.0 && q > 0.0 && q < 1.0);
        }
        for age in [0u32, 40, 65, 90, 110, 120] {
            let e = period_life_expectancy(&closed.mu, 0, age);
            prop_assert!(e > 0.0 && e <= (121 - age) as f64);
        }
    }

    #[test]
    fn death_probability_increases_with_force(a in 1e-8f64..5.0, gap in 1e-6f64..1.0) {
        prop_assert!(mortality_rate(a + gap) > mortality_rate(a));
    }

    #[test]
    fn common_fit_meets_constraints((d, e) in small_grid()) {
        let fit = fit_common_trend(&d, &e, &FitOptions::default()).unwrap();
        let sb2: f64 = fit.b.iter().map(|b| b * b).sum();
        prop_assert!((sb2 - 1.0).abs() < 1e-10);
        prop_assert!(fit.k.iter().sum::<f64>().abs() < 1e-8);
        prop_assert!(fit.b.iter().sum::<f64>() >= 0.0);
        prop_assert!(saturated_loglik(&d, &e) - fit.loglik >= -1e-9 * fit.loglik.abs());
    }

    #[test]
    fn zero_final_weight_drops_the_final_year(n in 15usize..40, z in prop::collection::vec(-2.5f64..2.5, 160)) {
        let s = series(n, z);
        let rows = build_design(&s);
        let w = fit_weighted_mle(&rows, &last_year_weights(rows.len(), 0.0)).unwrap();
        let short = build_design(&s.truncated(n - 1));
        let t = fit_weighted_mle(&short, &vec![1.0; short.len()]).unwrap();
        for i in 0..6 {
            prop_assert!((w.psi[i] - t.psi[i]).abs() <= 1e-10);
        }
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((w.covariance[i][j] - t.covariance[i][j]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn paths_start_at_the_jump_off_and_are_seeded(seed in any::<u64>(), jump in prop::array::uniform4(-5.0f64..5.0)) {
        let mut covariance = [[0.0; 4]; 4];
        for (i, row) in covariance.iter_mut().enumerate() {
            row[i] = 0.01;
        }
        let fit = TimeSeriesFit {
            psi: [-0.2, 0.0, 0.8, -0.15, 0.0, 0.9],
            std_errors: [0.0; 6],
            covariance,
            weights: Vec::new(),
            loglik: 0.0,
            iterations: 0,
            ridge_applied: false,
        };
        let spec = ScenarioSpec { jump_off_year: 2020, horizon: 2030, n_paths: 50, seed, jump_off: jump };
        let a = simulate_period_effects(&fit, &spec).unwrap();
        for i in 0..a.n_paths() {
            prop_assert_eq!(a.state(i, 2020), jump);
        }
        let b = simulate_period_effects(&fit, &spec).unwrap();
        prop_assert_eq!(a.raw(), b.raw());
    }
}
