use ecc::regression::{fit_piecewise, uniform_grid, Binning, PiecewiseOptions};
use ecc::EccError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn tanh_data(n: usize, sd: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y = x.iter().map(|v| v.tanh() + noise.sample(&mut rng)).collect();
    (x, y)
}

/// Least-squares line through `tanh` on the grid, and its RMSE there.
fn best_line_rmse(grid: &[f64]) -> f64 {
    let n = grid.len() as f64;
    let (mx, my) = (grid.iter().sum::<f64>() / n, grid.iter().map(|g| g.tanh()).sum::<f64>() / n);
    let sxy: f64 = grid.iter().map(|g| (g - mx) * (g.tanh() - my)).sum();
    let sxx: f64 = grid.iter().map(|g| (g - mx).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    (grid.iter().map(|g| (a + b * g - g.tanh()).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn exact_line_gives_uniform_slopes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..5000).map(|_| rng.random_range(-4.0..7.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
    for binning in [Binning::EqualWidth, Binning::EqualCount] {
        let fit = fit_piecewise(&x, &y, &PiecewiseOptions { binning, ..Default::default() }).unwrap();
        assert_eq!(fit.bins.len(), 20);
        for b in &fit.bins {
            assert!((b.slope - 3.0).abs() <= 1e-9, "{}", b.slope);
        }
        for g in uniform_grid(-4.0, 7.0, 101) {
            assert!((fit.predict(g).value - 3.0 * g).abs() < 1e-8);
        }
    }
}

#[test]
fn pieces_are_anchored_at_conditional_means() {
    let (x, y) = tanh_data(4000, 0.2, 2);
    let fit = fit_piecewise(&x, &y, &PiecewiseOptions::default()).unwrap();
    for b in &fit.bins {
        assert_eq!(b.eval(b.mean_x), b.mean_y);
    }
    // bins tile the observed range
    for w in fit.bins.windows(2) {
        assert_eq!(w[0].hi, w[1].lo);
    }
    assert_eq!(fit.bins.iter().map(|b| b.count).sum::<usize>(), x.len());
}

#[test]
fn constant_response_predicts_the_constant() {
    let x: Vec<f64> = (0..400).map(|i| i as f64 / 40.0).collect();
    let fit = fit_piecewise(&x, &vec![2.5; 400], &PiecewiseOptions { n_bins: 5, ..Default::default() }).unwrap();
    for g in [0.0, 3.3, 9.9, 12.0] {
        assert_eq!(fit.predict(g).value, 2.5);
    }
}

#[test]
fn tanh_fit_beats_the_best_line_and_flattens() {
    let (x, y) = tanh_data(10_000, 0.1, 3);
    let fit = fit_piecewise(&x, &y, &PiecewiseOptions::default()).unwrap();
    let grid = uniform_grid(-3.0, 3.0, 1000);
    let rmse = fit.rmse(f64::tanh, &grid);
    let line = best_line_rmse(&grid);
    assert!(rmse < 0.08, "{rmse}");
    assert!(rmse < line, "{rmse} vs {line}");
    let k = fit.bins.len();
    let central = fit.bins[k / 2].slope.abs();
    assert!(fit.bins[0].slope.abs() < central && fit.bins[k - 1].slope.abs() < central);
}

#[test]
fn rmse_falls_with_n() {
    let grid = uniform_grid(-3.0, 3.0, 500);
    let mean_rmse = |n: usize| {
        (0..5)
            .map(|s| {
                let (x, y) = tanh_data(n, 0.1, 10 + s);
                fit_piecewise(&x, &y, &PiecewiseOptions::default()).unwrap().rmse(f64::tanh, &grid)
            })
            .sum::<f64>()
            / 5.0
    };
    let (small, large) = (mean_rmse(1000), mean_rmse(10_000));
    assert!(large < small, "{large} vs {small}");
}

#[test]
fn extrapolation_is_flagged() {
    let (x, y) = tanh_data(2000, 0.1, 4);
    let fit = fit_piecewise(&x, &y, &PiecewiseOptions::default()).unwrap();
    assert!(fit.predict(-3.5).extrapolated && fit.predict(3.5).extrapolated);
    assert!(!fit.predict(0.0).extrapolated);
    assert_eq!(fit.predict(10.0).value, fit.bins.last().unwrap().eval(10.0));
}

#[test]
fn sparse_bins_are_merged() {
    // a gap in the middle leaves some equal-width bins empty
    let mut x: Vec<f64> = (0..300).map(|i| i as f64 / 100.0).collect();
    x.extend((0..300).map(|i| 7.0 + i as f64 / 100.0));
    let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
    let fit = fit_piecewise(&x, &y, &PiecewiseOptions { n_bins: 10, ..Default::default() }).unwrap();
    assert!(fit.merges > 0);
    assert!(fit.bins.iter().all(|b| b.count >= 10));
    assert_eq!(fit.bins.iter().map(|b| b.count).sum::<usize>(), 600);

    let few: Vec<f64> = (0..15).map(|i| i as f64).collect();
    let err = fit_piecewise(&few, &few, &PiecewiseOptions { n_bins: 4, ..Default::default() }).unwrap_err();
    assert!(matches!(err, EccError::InvalidInput(_) | EccError::InsufficientEventSample { .. }), "{err:?}");
    assert!(fit_piecewise(&x, &y, &PiecewiseOptions { n_bins: 1, ..Default::default() }).is_err());
}
