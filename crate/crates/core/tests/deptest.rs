mod common;

use common::{band_variance, shifted_correlation};
use ecc::deptest::{hoeffding_d, kendall_tau, run_tests, PValueMethod, TestKind};
use ecc::estimators::MomentSource;
use ecc::events::{event_mask, EventSpec};
use ecc::synth::{generate, GenSpec};
use ecc::{EccError, Sample};

fn a_sample(rho_xy: f64, rho_xz: f64, rho_yz: f64, n: usize, seed: u64) -> Sample {
    let s = generate(&GenSpec::gaussian(rho_xy, rho_xz, rho_yz, 1.0, n, seed)).unwrap();
    s.restrict(&event_mask(&s, &EventSpec::above("z", 0.0)).unwrap()).unwrap()
}

fn unit() -> MomentSource {
    MomentSource::asserted_variance(1.0)
}

#[test]
fn null_spot_check() {
    let s = generate(&GenSpec::gaussian(0.0, 0.0, 0.0, 1.0, 500, 3)).unwrap();
    let res = run_tests(&s, Some(&unit()), 999, 1).unwrap();
    assert_eq!(res.len(), 5);
    for (kind, r) in res {
        let r = r.unwrap();
        assert_eq!(r.test, kind);
        assert_eq!(r.method, PValueMethod::Permutation);
        assert!(r.p_value > 0.01, "{}: {}", kind.name(), r.p_value);
    }
}

#[test]
fn perfect_dependence_hits_the_floor() {
    let z: Vec<f64> = (0..200).map(|i| (i as f64 * 0.7).sin()).collect();
    let x: Vec<f64> = (0..200).map(|i| i as f64 / 10.0).collect();
    let s = Sample::xyz(x.clone(), x, z).unwrap();
    let b = 499;
    for (kind, r) in run_tests(&s, Some(&unit()), b, 2).unwrap() {
        let p = r.unwrap().p_value;
        assert!(p <= 1.0 / (b as f64 + 1.0) + 1e-15, "{}: {p}", kind.name());
    }
}

#[test]
fn deterministic_per_seed() {
    let s = a_sample(0.2, 0.3, 0.4, 600, 4);
    let a = run_tests(&s, Some(&unit()), 200, 9).unwrap();
    let b = run_tests(&s, Some(&unit()), 200, 9).unwrap();
    for ((_, x), (_, y)) in a.iter().zip(&b) {
        assert_eq!(x.as_ref().unwrap(), y.as_ref().unwrap());
    }
}

#[test]
fn rank_tests_ignore_monotone_transforms_of_y() {
    let s = a_sample(0.3, 0.2, 0.5, 800, 5);
    let t = s.with_column(1, s.y().iter().map(|v| (2.0 * v).exp() + v).collect()).unwrap();
    let a = run_tests(&s, None, 300, 6).unwrap();
    let b = run_tests(&t, None, 300, 6).unwrap();
    for k in [2, 3, 4] {
        let (ra, rb) = (a[k].1.as_ref().unwrap(), b[k].1.as_ref().unwrap());
        assert_eq!(ra.statistic, rb.statistic, "{}", a[k].0.name());
        assert_eq!(ra.p_value, rb.p_value);
    }
}

#[test]
fn constant_column_fails_only_where_undefined() {
    let z: Vec<f64> = (0..50).map(|i| i as f64).collect();
    let s = Sample::xyz(z.iter().map(|v| v.cos()).collect(), vec![1.0; 50], z).unwrap();
    let res = run_tests(&s, None, 100, 1).unwrap();
    for (kind, r) in &res {
        assert!(matches!(r, Err(EccError::UndefinedStatistic(_)) | Err(EccError::InvalidInput(_))), "{}", kind.name());
    }
    assert!(matches!(res[0].1, Err(EccError::InvalidInput(_))), "implied test without moments");
    assert!(run_tests(&s, None, 0, 1).is_err());
}

#[test]
fn statistics_match_textbook_values() {
    // concordant/discordant pairs of a short permutation
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [3.0, 1.0, 2.0, 5.0, 4.0];
    assert!((kendall_tau(&x, &y).unwrap() - 0.4).abs() < 1e-15);
    assert!((hoeffding_d(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    assert!(kendall_tau(&x, &[1.0; 5]).is_none());
}

#[test]
fn null_rejection_rate() {
    let reps = 1000;
    let mut rejections = [0usize; 5];
    for r in 0..reps {
        let s = a_sample(0.0, 0.0, 0.0, 120, 10_000 + r);
        for (k, (_, res)) in run_tests(&s, Some(&unit()), 199, r).unwrap().into_iter().enumerate() {
            rejections[k] += (res.unwrap().p_value <= 0.05) as usize;
        }
    }
    for (k, &c) in rejections.iter().enumerate() {
        let rate = c as f64 / reps as f64;
        assert!((0.03..=0.07).contains(&rate), "{}: {rate}", TestKind::ALL[k].name());
    }
}

#[test]
fn band_population_correlation_is_small_but_implied_is_not() {
    // rho_xy = -0.25, rho_yz = -rho_xz = 0.5 restricted to each decile band
    let (a, b, c) = (-0.25, -0.5, 0.5);
    let mut within = Vec::new();
    for i in 1..=10 {
        let v = band_variance(i as f64 / 10.0, 0.1);
        let r = shifted_correlation(a, b, c, v - 1.0);
        within.push(r);
        // the implied statistic targets the unconditional value in population
        let (rb, rc) = (shifted_correlation(b, b, 1.0, v - 1.0), shifted_correlation(c, c, 1.0, v - 1.0));
        let back = shifted_correlation(r, rb, rc, 1.0 / v - 1.0);
        assert!((back - a).abs() < 1e-9 && back.abs() > 0.15);
    }
    // the two tail deciles keep a little more variance and sit just above 0.05
    assert!(within[1..9].iter().all(|r| r.abs() < 0.05), "{within:?}");
    assert!(within[0].abs() < 0.055 && within[9].abs() < 0.055, "{within:?}");
}
