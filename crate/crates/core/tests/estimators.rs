mod common;

use common::*;
use ecc::estimators::{
    assumption_diagnostics, covariance_shift, covariance_shift_with_tol, delta_shift, ecc_population, implied_unconditional,
    ols_fit, partial_correlation, transport, Block, CorrelationParams, MomentSource, MomentStrategy,
};
use ecc::events::{decile_sweep, event_mask, Bound, EventSpec};
use ecc::synth::{generate, GenSpec};
use ecc::{ecc_estimate, ecc_subsample, EccError, Roles, Sample};
use nalgebra::DMatrix;

fn gaussian(a: f64, b: f64, c: f64, n: usize, seed: u64) -> Sample {
    generate(&GenSpec::gaussian(a, b, c, 1.0, n, seed)).unwrap()
}

#[test]
fn ols_exact_line() {
    let x: Vec<f64> = (0..100).map(|i| i as f64 * 0.37 - 5.0).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let s = Sample::new(vec!["x".into(), "y".into()], vec![x, y], Roles::shared(0, 1, vec![0])).unwrap();
    let fit = ols_fit(&s, 1, &[0]).unwrap();
    assert!((fit.beta[0] - 2.0).abs() < 1e-12);
    assert!(fit.residuals.iter().all(|r| r.abs() < 1e-10));
}

#[test]
fn ols_matches_closed_form_on_noise() {
    let cols = gaussian_columns(&DMatrix::identity(2, 2), 100_000, 31);
    let s = Sample::new(vec!["x".into(), "y".into()], cols.clone(), Roles::shared(0, 1, vec![0])).unwrap();
    let fit = ols_fit(&s, 1, &[0]).unwrap();
    let closed = sample_cov(&cols[0], &cols[1]) / sample_cov(&cols[0], &cols[0]);
    assert!((fit.beta[0] - closed).abs() < 1e-12);
    assert!(fit.beta[0].abs() < 0.02);
}

#[test]
fn ols_slope_is_rho_times_sd_ratio() {
    // sd(X) = 2, corr(X, Z) = 0.5, var(Z) = 1 gives slope 1
    let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 1.0]);
    let cols = gaussian_columns(&cov, 100_000, 32);
    let s = Sample::new(vec!["x".into(), "z".into()], cols, Roles::shared(0, 1, vec![1])).unwrap();
    let fit = ols_fit(&s, 0, &[1]).unwrap();
    assert!((fit.beta[0] - 1.0).abs() < 0.03, "{}", fit.beta[0]);
}

#[test]
fn ols_rejects_collinear_design() {
    let z: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
    let s = Sample::new(
        vec!["x".into(), "y".into(), "a".into(), "b".into()],
        vec![z.iter().map(|v| v + 1.0).collect(), z.iter().map(|v| v * v).collect(), z.clone(), z.iter().map(|v| 3.0 * v).collect()],
        Roles::shared(0, 1, vec![2, 3]),
    )
    .unwrap();
    match ols_fit(&s, 0, &[2, 3]) {
        Err(EccError::SingularDesign { columns }) => assert!(!columns.is_empty(), "{columns:?}"),
        other => panic!("expected singular design, got {other:?}"),
    }
}

#[test]
fn delta_shift_whole_space_is_zero() {
    let s = gaussian(0.3, 0.4, 0.5, 1000, 1);
    let d = delta_shift(&s, &EventSpec::All, Block::Z1, Block::Z2, MomentStrategy::Empirical).unwrap();
    assert!(d.delta.amax() < 1e-15);
    assert_eq!(d.event_mass, 1.0);
}

#[test]
fn delta_shift_matches_truncated_variance() {
    let s = gaussian(0.0, 0.0, 0.0, 1_000_000, 2);
    let above = delta_shift(&s, &EventSpec::above("z", 0.0), Block::Z1, Block::Z1, MomentStrategy::Empirical).unwrap();
    let want = truncated_variance(0.0, f64::INFINITY) - 1.0;
    assert!((want - (-2.0 / std::f64::consts::PI)).abs() < 1e-9);
    assert!((above.delta[(0, 0)] - want).abs() < 0.01, "{}", above.delta[(0, 0)]);

    let central = EventSpec::band("z", 0.55, 0.1).unwrap();
    let d = delta_shift(&s, &central, Block::Z1, Block::Z1, MomentStrategy::Empirical).unwrap();
    // nearly uniform on a width-0.25 interval, so about w^2 / 12 - 1
    let want = truncated_variance(std_normal_quantile(0.45), std_normal_quantile(0.55)) - 1.0;
    assert!((want + 0.9947).abs() < 5e-4, "{want}");
    assert!((d.delta[(0, 0)] - want).abs() < 0.002, "{}", d.delta[(0, 0)]);
}

#[test]
fn delta_shift_needs_three_rows() {
    let s = gaussian(0.3, 0.4, 0.5, 100, 3);
    let err = delta_shift(&s, &EventSpec::above("z", 1e6), Block::Z1, Block::Z1, MomentStrategy::Empirical).unwrap_err();
    assert!(matches!(err, EccError::InsufficientEventSample { count: 0, .. }), "{err:?}");
}

#[test]
fn population_examples() {
    let p = CorrelationParams::new(0.6, 0.7, 0.8, -1.0).unwrap();
    let v = ecc_population(&p).unwrap();
    assert!((v - 0.0933).abs() < 1e-4, "{v}");
    assert!((v - (0.6 - 0.56) / (0.51f64 * 0.36).sqrt()).abs() < 1e-12);
    assert!((partial_correlation(0.6, 0.7, 0.8) - v).abs() < 1e-12);
    // non-positive variance factor
    assert!(ecc_population(&CorrelationParams { rho_xy: 0.1, rho_xz: 0.9, rho_yz: 0.1, delta: -1.5 }).is_err());
}

#[test]
fn decile_curve_tracks_oracle() {
    let s = gaussian(0.6, 0.7, 0.8, 100_000, 7);
    for (upper, ev) in decile_sweep("z", 0.1) {
        let d = band_variance(upper, 0.1) - 1.0;
        let truth = shifted_correlation(0.6, 0.7, 0.8, d);
        let est = ecc_estimate(&s, &ev).unwrap();
        assert!((est.rho - truth).abs() < 0.02, "band {upper}: {} vs {truth}", est.rho);
        assert_eq!(est.n_total, 100_000);
    }
}

#[test]
fn independent_components_give_zero() {
    let s = gaussian(0.0, 0.0, 0.0, 100_000, 8);
    for ev in [EventSpec::above("z", 1.0), EventSpec::below("z", -0.3), EventSpec::band("z", 0.5, 0.1).unwrap()] {
        let e = ecc_estimate(&s, &ev).unwrap();
        assert!(e.rho.abs() < 0.02, "{ev}: {}", e.rho);
    }
}

#[test]
fn whole_space_and_null_covariate() {
    let s = gaussian(0.4, 0.3, 0.2, 5000, 9);
    let r = sample_corr(s.x(), s.y());
    assert!((ecc_estimate(&s, &EventSpec::All).unwrap().rho - r).abs() < 1e-12);
    assert!((ecc_subsample(&s, &EventSpec::All).unwrap().rho - r).abs() < 1e-12);

    // covariate with its projection on (X, Y) removed in-sample: both slopes vanish
    let (x, y) = (s.x().to_vec(), s.y().to_vec());
    let raw: Vec<f64> = (0..x.len()).map(|i| (i * 7919 % 1000) as f64 / 1000.0 - 0.5).collect();
    let g = nalgebra::Matrix2::new(sample_cov(&x, &x), sample_cov(&x, &y), sample_cov(&x, &y), sample_cov(&y, &y));
    let coef = g.try_inverse().unwrap() * nalgebra::Vector2::new(sample_cov(&x, &raw), sample_cov(&y, &raw));
    let z: Vec<f64> = (0..x.len()).map(|i| raw[i] - coef[0] * x[i] - coef[1] * y[i]).collect();
    let t = Sample::xyz(x, y, z).unwrap();
    let e = ecc_estimate(&t, &EventSpec::above("z", 0.1)).unwrap();
    assert!((e.rho - r).abs() < 1e-9, "{} vs {r}", e.rho);
}

#[test]
fn comonotone_subsample_is_one() {
    let z: Vec<f64> = (0..200).map(|i| i as f64).collect();
    let x: Vec<f64> = z.iter().map(|v| v.sin() * 10.0).collect();
    let s = Sample::xyz(x.clone(), x, z).unwrap();
    let e = ecc_subsample(&s, &EventSpec::above("z", 150.0)).unwrap();
    assert!((e.rho - 1.0).abs() < 1e-12);
}

#[test]
fn implied_with_matching_moments_is_identity() {
    let s = gaussian(0.3, 0.5, 0.4, 4000, 10);
    let a = s.restrict(&event_mask(&s, &EventSpec::above("z", 0.2)).unwrap()).unwrap();
    let var_a = sample_cov(a.column(2), a.column(2));
    let e = implied_unconditional(&a, &MomentSource::asserted_variance(var_a)).unwrap();
    assert!((e.rho - sample_corr(a.x(), a.y())).abs() < 1e-12);
}

#[test]
fn implied_rejects_wrong_shape() {
    let s = gaussian(0.3, 0.5, 0.4, 500, 11);
    let err = implied_unconditional(&s, &MomentSource::Asserted(DMatrix::identity(2, 2))).unwrap_err();
    assert!(matches!(err, EccError::DimensionMismatch(_)));
}

#[test]
fn implied_recovers_unconditional_on_outer_deciles() {
    // one A-sample of 500 rows per decile of a 5000-row draw; interior bands
    // shrink var(Z|A) to about 2% of var(Z), and the inversion amplifies their
    // noise to an sd near 0.25, so only the two outer bands are checked tightly
    let s = gaussian(-0.25, -0.5, 0.5, 5000, 12);
    let mut report = Vec::new();
    for (_, ev) in decile_sweep("z", 0.1) {
        let a = s.restrict(&event_mask(&s, &ev).unwrap()).unwrap();
        assert_eq!(a.n(), 500);
        report.push(implied_unconditional(&a, &MomentSource::asserted_variance(1.0)).unwrap().rho);
    }
    for k in [0, 9] {
        assert!((report[k] + 0.25).abs() <= 0.10, "{report:?}");
    }
    assert!(report.iter().all(|r| r.abs() <= 1.0));
}

#[test]
fn implied_with_truncated_likelihood_on_a_tail() {
    // tail events keep the truncated likelihood well identified
    let s = gaussian(0.4, 0.6, 0.5, 200_000, 13);
    let ev = EventSpec::above("z", 0.5);
    let a = s.restrict(&event_mask(&s, &ev).unwrap()).unwrap();
    let e = implied_unconditional(&a, &MomentSource::TruncatedGaussian(ev)).unwrap();
    assert!((e.rho - 0.4).abs() < 0.05, "{}", e.rho);
}

#[test]
fn transport_examples() {
    let p = CorrelationParams::new(0.3, 0.4, 0.5, 0.0).unwrap();
    assert_eq!(transport(&p, 0.0).unwrap(), 0.3);

    // measured inside the 0.5 band, moved to the top decile
    let s = gaussian(0.6, 0.7, 0.8, 100_000, 14);
    let from = EventSpec::band("z", 0.5, 0.1).unwrap();
    let to = EventSpec::band("z", 1.0, 0.1).unwrap();
    let a = s.restrict(&event_mask(&s, &from).unwrap()).unwrap();
    let b = s.restrict(&event_mask(&s, &to).unwrap()).unwrap();
    let under_a = CorrelationParams {
        rho_xy: sample_corr(a.x(), a.y()),
        rho_xz: sample_corr(a.x(), a.column(2)),
        rho_yz: sample_corr(a.y(), a.column(2)),
        delta: 0.0,
    };
    let ratio = sample_cov(b.column(2), b.column(2)) / sample_cov(a.column(2), a.column(2));
    let moved = transport(&under_a, ratio - 1.0).unwrap();
    let truth = shifted_correlation(0.6, 0.7, 0.8, band_variance(1.0, 0.1) - 1.0);
    assert!((moved - truth).abs() < 0.02, "{moved} vs {truth}");
}

#[test]
fn diagnostics_examples() {
    let s = gaussian(0.6, 0.7, 0.8, 100_000, 15);
    let d = assumption_diagnostics(&s, &EventSpec::above("z", 0.3)).unwrap();
    assert!(d.a2_gap < 5e-3, "{}", d.a2_gap);

    let big = gaussian(0.6, 0.7, 0.8, 1_000_000, 16);
    let d = assumption_diagnostics(&big, &EventSpec::band("z", 0.9, 0.1).unwrap()).unwrap();
    assert!(d.a1_gap < 1e-2, "{}", d.a1_gap);

    let d = assumption_diagnostics(&s, &EventSpec::All).unwrap();
    assert!(d.a1_gap < 1e-12 && d.a2_gap < 1e-12 && d.bias_bound_scale < 1e-12, "{d:?}");
}

/// Covariance of `(X1, X2, X3, Z)` with `Z` standard normal.
fn four_vector() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.3, 0.2, 0.5, //
            0.3, 1.0, 0.1, -0.4, //
            0.2, 0.1, 1.0, 0.6, //
            0.5, -0.4, 0.6, 1.0,
        ],
    )
}

#[test]
fn covariance_shift_rank() {
    let sigma = four_vector();
    let zero = covariance_shift(&sigma, &sigma, 1).unwrap();
    assert_eq!(zero.effective_rank, 0);
    assert!(zero.delta.amax() == 0.0);

    // conditioning on Z > 0.7 only rescales the Z direction
    let beta = sigma.column(3).clone_owned();
    let shift = truncated_variance(0.7, f64::INFINITY) - 1.0;
    let sigma_a = &sigma + &beta * beta.transpose() * shift;
    let pop = covariance_shift(&sigma, &sigma_a, 1).unwrap();
    assert!(pop.singular_values[1..].iter().all(|&v| v < 1e-10), "{:?}", pop.singular_values);
    assert!(pop.within_rank_bound());

    let cols = gaussian_columns(&sigma, 100_000, 17);
    let rows: Vec<usize> = (0..cols[3].len()).filter(|&i| cols[3][i] > 0.7).collect();
    let cov_of = |rows: Option<&[usize]>| {
        DMatrix::from_fn(4, 4, |i, j| match rows {
            None => sample_cov(&cols[i], &cols[j]),
            Some(r) => {
                let a: Vec<f64> = r.iter().map(|&k| cols[i][k]).collect();
                let b: Vec<f64> = r.iter().map(|&k| cols[j][k]).collect();
                sample_cov(&a, &b)
            }
        })
    };
    let sample = covariance_shift_with_tol(&cov_of(None), &cov_of(Some(&rows)), 1, 0.05).unwrap();
    assert!(sample.singular_values[1] < 0.05 * sample.singular_values[0], "{:?}", sample.singular_values);
    assert!(sample.within_rank_bound());
    assert!(covariance_shift(&sigma, &DMatrix::identity(3, 3), 1).is_err());
}

#[test]
fn rectangle_top_decile_variance() {
    let s = gaussian(0.0, 0.0, 0.0, 1_000_000, 18);
    let q = std_normal_quantile(0.9);
    let ev = EventSpec::rectangle(vec![Bound { column: "z".into(), lo: q, hi: f64::INFINITY }]).unwrap();
    let mask = event_mask(&s, &ev).unwrap();
    let z: Vec<f64> = s.column(2).iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    let want = truncated_variance(q, f64::INFINITY);
    assert!((sample_cov(&z, &z) - want).abs() < 0.01);
}

#[test]
fn band_occupancy() {
    let z: Vec<f64> = (0..1000).map(|i| ((i * 613) % 1000) as f64 * 0.01).collect();
    let s = Sample::xyz(z.clone(), z.clone(), z).unwrap();
    let count = event_mask(&s, &EventSpec::band("z", 0.5, 0.1).unwrap()).unwrap().iter().filter(|&&m| m).count();
    assert!((99..=101).contains(&count), "{count}");
    let all = event_mask(&s, &EventSpec::above("z", f64::NEG_INFINITY)).unwrap();
    assert!(all.iter().all(|&m| m));
}
