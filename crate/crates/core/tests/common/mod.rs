//! Independent oracles shared by the integration suites. Nothing here calls
//! into the library's own moment or quantile code.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Standard normal CDF by integrating the density from -12.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x < -12.0 {
        return 0.0;
    }
    simpson(std_normal_pdf, -12.0, x, 40_000)
}

/// Standard normal quantile by bisection on [`std_normal_cdf`].
pub fn std_normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if std_normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Variance of a standard normal restricted to `[a, b]`; infinite limits are
/// replaced by +-12.
pub fn truncated_variance(a: f64, b: f64) -> f64 {
    let (a, b) = (a.max(-12.0), b.min(12.0));
    let m0 = simpson(std_normal_pdf, a, b, 20_000);
    let m1 = simpson(|z| z * std_normal_pdf(z), a, b, 20_000) / m0;
    let m2 = simpson(|z| z * z * std_normal_pdf(z), a, b, 20_000) / m0;
    m2 - m1 * m1
}

/// Variance of a standard normal inside the decile band ending at `upper`.
pub fn band_variance(upper: f64, width: f64) -> f64 {
    let lo = if upper - width <= 1e-12 { f64::NEG_INFINITY } else { std_normal_quantile(upper - width) };
    let hi = if upper >= 1.0 - 1e-12 { f64::INFINITY } else { std_normal_quantile(upper) };
    truncated_variance(lo, hi)
}

/// `(a + b c d) / sqrt((1 + b^2 d)(1 + c^2 d))`, written out independently.
pub fn shifted_correlation(a: f64, b: f64, c: f64, d: f64) -> f64 {
    (a + b * c * d) / ((1.0 + b * b * d) * (1.0 + c * c * d)).sqrt()
}

/// `n` draws from `N(0, cov)` as columns.
pub fn gaussian_columns(cov: &DMatrix<f64>, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let p = cov.nrows();
    let l = cov.clone().cholesky().expect("positive definite").l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = vec![Vec::with_capacity(n); p];
    let mut g = vec![0.0; p];
    for _ in 0..n {
        for v in g.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for i in 0..p {
            let mut s = 0.0;
            for j in 0..=i {
                s += l[(i, j)] * g[j];
            }
            cols[i].push(s);
        }
    }
    cols
}

pub fn corr3(a: f64, b: f64, c: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, a, b, a, 1.0, c, b, c, 1.0])
}

pub fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

pub fn sample_corr(a: &[f64], b: &[f64]) -> f64 {
    sample_cov(a, b) / (sample_cov(a, a) * sample_cov(b, b)).sqrt()
}
