use super::*;
use crate::data::{MortalitySurface, Provenance};

fn grid(ages: AgeRange, years: YearRange, f: impl FnMut(u32, i32) -> f64) -> AgeYearGrid {
    AgeYearGrid::from_fn(ages, years, f)
}

fn ranges(na: u32, nt: i32) -> (AgeRange, YearRange) {
    (AgeRange::new(0, na - 1).unwrap(), YearRange::new(2000, 2000 + nt - 1).unwrap())
}

fn true_common(na: usize, nt: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..na).map(|i| -7.0 + 0.08 * i as f64).collect();
    let raw: Vec<f64> = (0..na).map(|i| 1.0 + 0.5 * (i as f64 / na as f64)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let b = raw.iter().map(|v| v / norm).collect();
    let mut k: Vec<f64> = (0..nt).map(|j| -0.6 * j as f64 + 0.3 * (j as f64).sin()).collect();
    let mean = k.iter().sum::<f64>() / nt as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    (a, b, k)
}

#[test]
fn constant_rates_give_flat_period_effect() {
    let (ages, years) = ranges(4, 6);
    let m = [0.001, 0.002, 0.01, 0.05];
    let e = grid(ages, years, |_, _| 1e5);
    let d = grid(ages, years, |x, _| 1e5 * m[x as usize]);
    let fit = fit_common_trend(&d, &e, &FitOptions::default()).unwrap();
    for (i, &mi) in m.iter().enumerate() {
        assert!((fit.a[i] - mi.ln()).abs() < 1e-10);
    }
    assert!(fit.k.iter().all(|k| k.abs() < 1e-8), "{:?}", fit.k);
    let ll = bilinear_loglik(&d, &e, None, &fit.a, &fit.b, &fit.k);
    assert!((ll - saturated_loglik(&d, &e)).abs() < 1e-6 * ll.abs());
}

#[test]
fn recovers_noise_free_common_trend() {
    let (ages, years) = ranges(8, 12);
    let (a, b, k) = true_common(8, 12);
    let e = grid(ages, years, |x, t| 1e6 * (1.0 + 0.01 * x as f64 + 0.002 * (t - 2000) as f64));
    let d = grid(ages, years, |x, t| {
        let (i, j) = (x as usize, (t - 2000) as usize);
        e.at(i, j) * (a[i] + b[i] * k[j]).exp()
    });
    let fit = fit_common_trend(&d, &e, &FitOptions::default()).unwrap();
    for i in 0..8 {
        assert!((fit.a[i] - a[i]).abs() < 1e-8);
        assert!((fit.b[i] - b[i]).abs() < 1e-8);
    }
    for j in 0..12 {
        assert!((fit.k[j] - k[j]).abs() < 1e-8);
    }
    assert!((fit.b.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-10);
    assert!(fit.k.iter().sum::<f64>().abs() < 1e-8);
}

#[test]
fn loglik_trace_is_monotone_and_deviance_nonnegative() {
    let (ages, years) = ranges(5, 7);
    let e = grid(ages, years, |x, t| 2e4 + 1e3 * x as f64 + 10.0 * t as f64);
    // Irregular deaths so the model does not fit exactly.
    let d = grid(ages, years, |x, t| {
        let m = (-6.0 + 0.4 * x as f64 - 0.02 * (t - 2000) as f64).exp();
        (e.get(x, t).unwrap() * m * (1.0 + 0.1 * ((x * 7 + t as u32) % 5) as f64)).round()
    });
    let fit = fit_common_trend(&d, &e, &FitOptions::default()).unwrap();
    let trace = &fit.diagnostics.trace;
    for w in trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} then {}", w[0], w[1]);
    }
    assert!(saturated_loglik(&d, &e) - fit.loglik >= 0.0);
}

#[test]
fn scaling_data_leaves_fit_unchanged() {
    let (ages, years) = ranges(5, 6);
    let e = grid(ages, years, |x, _| 5e4 + 100.0 * x as f64);
    let d = grid(ages, years, |x, t| {
        (e.get(x, t).unwrap() * (-5.0 + 0.3 * x as f64 - 0.03 * (t - 2000) as f64 + 0.01 * ((x + t as u32) % 3) as f64).exp())
            .round()
    });
    let f1 = fit_common_trend(&d, &e, &FitOptions::default()).unwrap();
    let f2 = fit_common_trend(&d.map(|v| 2.0 * v), &e.map(|v| 2.0 * v), &FitOptions::default()).unwrap();
    for i in 0..5 {
        assert!((f1.a[i] - f2.a[i]).abs() < 1e-7);
        assert!((f1.b[i] - f2.b[i]).abs() < 1e-7);
    }
    for j in 0..6 {
        assert!((f1.k[j] - f2.k[j]).abs() < 1e-7);
    }
}

#[test]
fn zero_death_row_is_reported() {
    let (ages, years) = ranges(3, 4);
    let e = grid(ages, years, |_, _| 1e3);
    let d = grid(ages, years, |x, _| if x == 1 { 0.0 } else { 5.0 });
    match fit_common_trend(&d, &e, &FitOptions::default()) {
        Err(LiLeeError::ZeroDeathRow { age }) => assert_eq!(age, 1),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn deviation_vanishes_for_country_on_common_surface() {
    let (ages, years) = ranges(6, 8);
    let (a, b, k) = true_common(6, 8);
    let e = grid(ages, years, |x, _| 1e6 + 1e4 * x as f64);
    let d = grid(ages, years, |x, t| {
        let (i, j) = (x as usize, (t - 2000) as usize);
        e.at(i, j) * (a[i] + b[i] * k[j]).exp()
    });
    let common = fit_common_trend(&d, &e, &FitOptions::default()).unwrap();
    let ec = e.map(|v| 0.1 * v);
    let dc = d.map(|v| 0.1 * v);
    let dev = fit_country_deviation(&dc, &ec, &common, &FitOptions::default()).unwrap();
    assert!(dev.alpha.iter().all(|v| v.abs() < 1e-8), "{:?}", dev.alpha);
    assert!(dev.kappa.iter().all(|v| v.abs() < 1e-8), "{:?}", dev.kappa);
}

fn dataset_from_truth(na: u32, nt: i32) -> MultiPopulationDataset {
    let (ages, years) = ranges(na, nt);
    let (a, b, k) = true_common(na as usize, nt as usize);
    let mut surfaces = Vec::new();
    for (c, shift) in [("AA", 0.0), ("BB", 0.15)] {
        for g in Gender::BOTH {
            let gshift = if g == Gender::Female { -0.3 } else { 0.0 };
            let e = grid(ages, years, |x, _| 1e6 * (1.0 - 0.005 * x as f64));
            let d = grid(ages, years, |x, t| {
                let (i, j) = (x as usize, (t - 2000) as usize);
                let dev = shift * (1.0 + 0.1 * i as f64) * (0.2 * j as f64 - 0.5);
                e.at(i, j) * (a[i] + gshift + b[i] * k[j] + dev).exp()
            });
            surfaces.push(MortalitySurface::uniform(c.into(), g, d, e, Provenance::Hmd).unwrap());
        }
    }
    MultiPopulationDataset::new(surfaces, vec!["AA".into(), "BB".into()]).unwrap()
}

#[test]
fn li_lee_fitted_surface_matches_components() {
    let ds = dataset_from_truth(6, 9);
    let cal = fit_li_lee(&ds, &"BB".into(), &FitOptions::default()).unwrap();
    for g in Gender::BOTH {
        let p = cal.params.population(g).unwrap();
        let fs = &cal.fitted[&g];
        for x in 0..6u32 {
            for t in 2000..2009 {
                let mu = cal.params.evaluate_mu(g, x, t).unwrap();
                assert!((fs.mu_country.get(x, t).unwrap() / mu - 1.0).abs() < 1e-14);
                let (i, j) = (x as usize, (t - 2000) as usize);
                let common = p.log_mu_common(i, p.k[j]).exp();
                let ratio = (p.alpha[i] + p.beta[i] * p.kappa[j]).exp();
                assert!((fs.mu_country.get(x, t).unwrap() / (common * ratio) - 1.0).abs() < 1e-13);
            }
        }
        assert!(p.b.iter().sum::<f64>() >= 0.0);
        assert!(p.beta.iter().sum::<f64>() >= 0.0);
        assert!((p.beta.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(p.kappa.iter().sum::<f64>().abs() < 1e-8);
    }
}

#[test]
fn lee_miller_anchors_reproduce_blend() {
    let ds = dataset_from_truth(5, 8);
    let country: Country = "BB".into();
    for weight in [0.0, 0.5, 1.0] {
        let cal = fit_adjusted_lee_miller(&ds, &country, weight, &FitOptions::default()).unwrap();
        for g in Gender::BOTH {
            let s = ds.surface(&country, g).unwrap();
            let (dt, et) = ds.aggregate(g);
            let anchors = lee_miller_anchors((&dt, &et), (s.deaths(), s.exposures()), weight).unwrap();
            let p = cal.params.population(g).unwrap();
            assert_eq!(p.a, anchors.common);
            assert_eq!(p.alpha, anchors.country);
            assert_eq!(*p.k.last().unwrap(), 0.0);
            assert_eq!(*p.kappa.last().unwrap(), 0.0);
            for x in 0..5u32 {
                let fitted = cal.params.evaluate_mu(g, x, 2007).unwrap().ln();
                let obs = |t| (s.deaths().get(x, t).unwrap() / s.exposures().get(x, t).unwrap()).ln();
                let expected = weight * obs(2007) + (1.0 - weight) * obs(2006);
                assert!((fitted - expected).abs() < 1e-12, "w={weight} x={x}: {fitted} vs {expected}");
            }
        }
    }
}

#[test]
fn undefined_anchor_is_an_error() {
    let (ages, years) = ranges(2, 3);
    let e = grid(ages, years, |_, _| 100.0);
    let d = grid(ages, years, |x, t| if x == 1 && t == 2002 { 0.0 } else { 1.0 });
    let err = lee_miller_anchors((&d, &e), (&d, &e), 1.0).unwrap_err();
    assert!(matches!(err, LiLeeError::UndefinedAnchor { age: 1, year: 2002, .. }));
    assert!(matches!(
        lee_miller_anchors((&d, &e), (&d, &e), 1.5),
        Err(LiLeeError::InvalidWeight(_))
    ));
}

#[test]
fn evaluate_mu_examples() {
    let p = PopulationParams {
        a: vec![-4.0],
        b: vec![0.0],
        k: vec![3.0],
        alpha: vec![0.0],
        beta: vec![0.0],
        kappa: vec![1.0],
    };
    assert_eq!(p.log_mu(0, 17.0, -2.0).exp(), (-4.0f64).exp());
    let p2 = PopulationParams {
        beta: vec![std::f64::consts::LN_2],
        ..p
    };
    let ratio = p2.log_mu(0, 0.0, 1.0).exp() / p2.log_mu_common(0, 0.0).exp();
    assert!((ratio - 2.0).abs() < 1e-15);
}

#[test]
fn parameter_table_round_trips_exactly() {
    let ds = dataset_from_truth(4, 5);
    let cal = fit_li_lee(&ds, &"AA".into(), &FitOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_params(&mut buf, &cal.params).unwrap();
    let back = read_params(buf.as_slice(), ModelKind::LiLee).unwrap();
    assert_eq!(back, cal.params);
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("param,gender,index,value\nA,M,0,"));
}

#[test]
fn parameter_table_rejects_gaps() {
    let text = "param,gender,index,value\nA,M,0,1\nA,M,2,1\n";
    assert!(read_params(text.as_bytes(), ModelKind::LiLee).is_err());
}
