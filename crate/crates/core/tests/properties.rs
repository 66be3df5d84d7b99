//! Algebraic and structural invariants, checked on random inputs.

use ecc::estimators::{
    conditional_params, ecc_estimate, ecc_population, ecc_subsample, implied_from_moments, inverse_shift,
    partial_correlation, transport, CorrelationParams, ImpliedInputs,
};
use ecc::events::{decile_sweep, event_mask, EventSpec};
use ecc::inference::{phi, phi_gradient};
use ecc::network::{clip_to_correlation, eigenvector_centrality, partial_correlation_network, RegimeLabel, CentralityNorm};
use ecc::stats;
use ecc::Sample;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Correlation triples whose 3x3 matrix is comfortably positive definite.
fn admissible() -> impl Strategy<Value = (f64, f64, f64)> {
    (-0.95..0.95f64, -0.95..0.95f64, -0.95..0.95f64)
        .prop_filter("positive definite", |&(a, b, c)| 1.0 + 2.0 * a * b * c - a * a - b * b - c * c > 1e-3)
}

fn oracle_partial(a: f64, b: f64, c: f64) -> f64 {
    // -P_xy / sqrt(P_xx P_yy) from the explicit 3x3 inverse
    let m = DMatrix::from_row_slice(3, 3, &[1.0, a, b, a, 1.0, c, b, c, 1.0]);
    let p = m.try_inverse().unwrap();
    -p[(0, 1)] / (p[(0, 0)] * p[(1, 1)]).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn forward_then_inverse_recovers_rho((a, b, c) in admissible(), delta in -0.95..4.0f64, var_z in 0.1..10.0f64) {
        let p = CorrelationParams::new(a, b, c, delta).unwrap();
        let cond = conditional_params(&p).unwrap();
        let inp = ImpliedInputs {
            rho_xy_a: cond.rho_xy,
            rho_xz1_a: vec![cond.rho_xz],
            rho_yz2_a: vec![cond.rho_yz],
            cov_z_a: DMatrix::from_element(2, 2, var_z * (1.0 + delta)),
            cov_z: DMatrix::from_element(2, 2, var_z),
        };
        let back = implied_from_moments(&inp).unwrap();
        prop_assert!((back.rho_xy - a).abs() <= 1e-12, "{} vs {}", back.rho_xy, a);
        // the transport identity undoes the shift as well
        let t = transport(&cond, inverse_shift(delta)).unwrap();
        prop_assert!((t - a).abs() <= 1e-12);
    }

    #[test]
    fn full_collapse_is_partial_correlation((a, b, c) in admissible()) {
        let v = ecc_population(&CorrelationParams::new(a, b, c, -1.0).unwrap()).unwrap();
        prop_assert!((v - partial_correlation(a, b, c)).abs() <= 1e-12);
        prop_assert!((v - oracle_partial(a, b, c)).abs() <= 1e-10);
    }

    #[test]
    fn no_shift_or_no_covariate_link_is_identity((a, b, c) in admissible(), delta in -0.99..5.0f64) {
        prop_assert_eq!(ecc_population(&CorrelationParams::new(a, b, c, 0.0).unwrap()).unwrap(), a);
        let free = CorrelationParams::new(a, 0.0, 0.0, delta).unwrap();
        prop_assert!((ecc_population(&free).unwrap() - a).abs() <= 1e-15);
    }

    #[test]
    fn population_values_are_correlations((a, b, c) in admissible(), delta in -1.0..20.0f64) {
        let v = ecc_population(&CorrelationParams::new(a, b, c, delta).unwrap()).unwrap();
        prop_assert!(v.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn transport_composes((a, b, c) in admissible(), d1 in -0.9..3.0f64, d2 in -0.9..3.0f64) {
        // A -> A' -> A'' equals A -> A'' with the composed variance ratio
        let p = CorrelationParams::new(a, b, c, 0.0).unwrap();
        let mid = ecc::estimators::transport_params(&p, d1).unwrap();
        let two_step = transport(&mid, d2).unwrap();
        let direct = transport(&p, (1.0 + d1) * (1.0 + d2) - 1.0).unwrap();
        prop_assert!((two_step - direct).abs() <= 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences(a in -0.9..0.9f64, b in -0.9..0.9f64, c in -0.9..0.9f64, d in -0.9..2.0f64) {
        let theta = [a, b, c, d];
        let g = phi_gradient(&theta).unwrap();
        for k in 0..4 {
            let h = 1e-6;
            let mut up = theta;
            let mut dn = theta;
            up[k] += h;
            dn[k] -= h;
            let fd = (phi(&up).unwrap() - phi(&dn).unwrap()) / (2.0 * h);
            let scale = g[k].abs().max(1e-3);
            prop_assert!((fd - g[k]).abs() / scale <= 1e-6, "component {}: {} vs {}", k, g[k], fd);
        }
    }

    #[test]
    fn whole_space_estimate_is_sample_correlation(seed in 0u64..1000) {
        let s = ecc::synth::generate(&ecc::synth::GenSpec::gaussian(0.3, -0.2, 0.5, 1.0, 200, seed)).unwrap();
        let e = ecc_estimate(&s, &EventSpec::All).unwrap().rho;
        let sub = ecc_subsample(&s, &EventSpec::All).unwrap().rho;
        let r = stats::pearson(s.x(), s.y()).unwrap();
        prop_assert!((e - r).abs() <= 1e-12);
        prop_assert_eq!(sub, r);
    }

    #[test]
    fn estimates_stay_in_range(seed in 0u64..1000, band in 0usize..10) {
        let s = ecc::synth::generate(&ecc::synth::GenSpec::gaussian(0.85, 0.3, 0.6, 1.0, 60, seed)).unwrap();
        let (_, ev) = decile_sweep("z", 0.1).swap_remove(band);
        if let Ok(e) = ecc_estimate(&s, &ev) {
            prop_assert!(e.rho.abs() <= 1.0);
        }
    }

    #[test]
    fn monotone_covariate_transform_keeps_band_membership(seed in 0u64..500, band in 0usize..10) {
        let s = ecc::synth::generate(&ecc::synth::GenSpec::gaussian(0.4, 0.5, 0.6, 1.0, 300, seed)).unwrap();
        let t = s.with_column(2, s.column(2).iter().map(|v| v.exp()).collect()).unwrap();
        let (_, ev) = decile_sweep("z", 0.1).swap_remove(band);
        prop_assert_eq!(event_mask(&s, &ev).unwrap(), event_mask(&t, &ev).unwrap());
        prop_assert_eq!(ecc_subsample(&s, &ev).unwrap().rho, ecc_subsample(&t, &ev).unwrap().rho);
    }

    #[test]
    fn network_recovers_precision_sign_pattern(p in 3usize..=8, entries in proptest::collection::vec(-1.0..1.0f64, 64)) {
        // random PD matrix A A' + I, scaled to a correlation matrix
        let a = DMatrix::from_fn(p, p, |i, j| entries[i * 8 + j]);
        let cov = &a * a.transpose() + DMatrix::identity(p, p);
        let d: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
        let corr = DMatrix::from_fn(p, p, |i, j| cov[(i, j)] / (d[i] * d[j]));
        let net = partial_correlation_network(&corr, RegimeLabel::Full).unwrap();
        let prec = corr.clone().try_inverse().unwrap();
        for i in 0..p {
            prop_assert_eq!(net.weights[(i, i)], 0.0);
            for j in 0..p {
                prop_assert!((net.weights[(i, j)] - net.weights[(j, i)]).abs() <= 1e-12);
                if i != j {
                    // rebuild P_ij from the network and the diagonal of P
                    let rebuilt = -net.weights[(i, j)] * (prec[(i, i)] * prec[(j, j)]).sqrt();
                    prop_assert!((rebuilt - prec[(i, j)]).abs() <= 1e-8 * prec.amax());
                }
            }
        }
    }

    #[test]
    fn centrality_is_a_fixed_point(p in 3usize..=8, entries in proptest::collection::vec(-1.0..1.0f64, 64)) {
        let w = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { 0.5 * (entries[i * 8 + j] + entries[j * 8 + i]) });
        let net = ecc::network::Network { weights: w.clone(), label: RegimeLabel::Full, ridge: None };
        let c = eigenvector_centrality(&net, CentralityNorm::L2).unwrap();
        let v = nalgebra::DVector::from_vec(c.scores.clone());
        let m = w.map(f64::abs);
        let resid = (&m * &v - &v * c.eigenvalue).norm();
        prop_assert!(resid <= 1e-8 * v.norm(), "residual {}", resid);
        prop_assert!(c.scores.iter().all(|&s| s >= -1e-12));
        prop_assert!((v.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn clipping_returns_a_correlation_matrix(p in 3usize..=6, entries in proptest::collection::vec(-1.0..1.0f64, 36)) {
        let m = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { entries[i.min(j) * 6 + i.max(j)] });
        let (c, _) = clip_to_correlation(&m, 1e-6);
        for i in 0..p {
            prop_assert!((c[(i, i)] - 1.0).abs() <= 1e-12);
        }
        let eig = c.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|&l| l >= -1e-10));
    }
}

#[test]
fn decile_masks_partition_rows() {
    let z: Vec<f64> = (0..997).map(|i| ((i * 7919) % 997) as f64).collect();
    let s = Sample::xyz(z.iter().map(|v| v.sin()).collect(), z.iter().map(|v| v.cos()).collect(), z).unwrap();
    let mut hits = vec![0; s.n()];
    for (_, ev) in decile_sweep("z", 0.1) {
        for (h, m) in hits.iter_mut().zip(event_mask(&s, &ev).unwrap()) {
            *h += m as u32;
        }
    }
    assert!(hits.iter().all(|&h| h == 1));
}
