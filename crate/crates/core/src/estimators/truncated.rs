//! Maximum likelihood for Gaussians observed only inside an interval of one
//! coordinate.
//!
//! The constrained coordinate follows a renormalized (truncated) normal; the
//! remaining coordinates are Gaussian given it, so their regression on the
//! constrained coordinate is unaffected by truncation and is fitted by least
//! squares.

use crate::error::{EccError, Result};
use crate::optim::{self, BfgsOptions};
use crate::stats::{self, norm_pdf};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct TruncatedNormalFit {
    pub mu: f64,
    pub sigma: f64,
    pub iterations: usize,
    /// Mean log-likelihood per observation at the optimum.
    pub mean_loglik: f64,
}

/// Mean negative log-likelihood and its gradient in `(mu, ln sigma)`, for
/// data summarized by its mean square `m2` (data already centered).
fn objective(params: &DVector<f64>, m2: f64, lo: f64, hi: f64) -> (f64, DVector<f64>) {
    let mu = params[0];
    let sigma = params[1].exp();
    let alpha = (lo - mu) / sigma;
    let beta = (hi - mu) / sigma;
    let mass = stats::norm_interval_mass(alpha, beta);
    if !(mass > 1e-300) || !sigma.is_finite() || sigma <= 0.0 {
        return (f64::INFINITY, DVector::zeros(2));
    }
    let s = m2 + mu * mu;
    let value = 0.5 * s / (sigma * sigma) + sigma.ln() + mass.ln();
    let (pa, pb) = (norm_pdf(alpha), norm_pdf(beta));
    let apa = if alpha.is_finite() { alpha * pa } else { 0.0 };
    let bpb = if beta.is_finite() { beta * pb } else { 0.0 };
    let d_mu = mu / (sigma * sigma) + (pa - pb) / (sigma * mass);
    let d_s = -s / (sigma * sigma) + 1.0 + (apa - bpb) / mass;
    (value, DVector::from_vec(vec![d_mu, d_s]))
}

/// Fits `N(mu, sigma^2)` to `values` observed only on `[lo, hi]`, starting at
/// the sample moments.
pub fn fit_truncated_normal(values: &[f64], lo: f64, hi: f64, opts: BfgsOptions) -> Result<TruncatedNormalFit> {
    if values.len() < 3 {
        return Err(EccError::InsufficientEventSample {
            count: values.len(),
            required: 3,
        });
    }
    if !(lo < hi) {
        return Err(EccError::InvalidInput("truncation interval needs lo < hi".into()));
    }
    if values.iter().any(|&v| v < lo || v > hi) {
        return Err(EccError::InvalidInput("observations fall outside the truncation interval".into()));
    }
    let m = stats::mean(values);
    let sd = stats::variance(values).sqrt();
    if !(sd > 0.0) {
        return Err(EccError::DegenerateConditioning("constant truncated sample".into()));
    }
    let n = values.len() as f64;
    let m2 = values.iter().map(|v| ((v - m) / sd).powi(2)).sum::<f64>() / n;
    let (a, b) = ((lo - m) / sd, (hi - m) / sd);
    let res = optim::minimize(|p| objective(p, m2, a, b), DVector::zeros(2), opts)?;
    Ok(TruncatedNormalFit {
        mu: m + sd * res.x[0],
        sigma: sd * res.x[1].exp(),
        iterations: res.iterations,
        mean_loglik: -res.value - sd.ln(),
    })
}

/// Unconditional Gaussian moments of `columns` recovered from a sample in
/// which column `constrained` was only observed on `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct TruncatedGaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub iterations: usize,
}

pub fn fit_truncated_gaussian(
    columns: &[&[f64]],
    constrained: usize,
    lo: f64,
    hi: f64,
    opts: BfgsOptions,
) -> Result<TruncatedGaussianFit> {
    let k = columns.len();
    if constrained >= k {
        return Err(EccError::InvalidInput("constrained column out of range".into()));
    }
    let zk = columns[constrained];
    let fit = fit_truncated_normal(zk, lo, hi, opts)?;
    let var_k = fit.sigma * fit.sigma;
    let mut mean = DVector::zeros(k);
    let mut cov = DMatrix::zeros(k, k);
    mean[constrained] = fit.mu;
    cov[(constrained, constrained)] = var_k;

    let others: Vec<usize> = (0..k).filter(|&i| i != constrained).collect();
    if !others.is_empty() {
        let zk_var = stats::variance(zk);
        let zk_mean = stats::mean(zk);
        let slopes: Vec<f64> = others.iter().map(|&i| stats::covariance(columns[i], zk) / zk_var).collect();
        let intercepts: Vec<f64> = others
            .iter()
            .zip(&slopes)
            .map(|(&i, b)| stats::mean(columns[i]) - b * zk_mean)
            .collect();
        let resid: Vec<Vec<f64>> = others
            .iter()
            .zip(slopes.iter().zip(&intercepts))
            .map(|(&i, (b, a))| columns[i].iter().zip(zk).map(|(v, z)| v - a - b * z).collect())
            .collect();
        let rrefs: Vec<&[f64]> = resid.iter().map(Vec::as_slice).collect();
        let s_e = stats::covariance_matrix(&rrefs, None);
        for (p, &i) in others.iter().enumerate() {
            mean[i] = intercepts[p] + slopes[p] * fit.mu;
            cov[(i, constrained)] = slopes[p] * var_k;
            cov[(constrained, i)] = slopes[p] * var_k;
            for (q, &j) in others.iter().enumerate() {
                cov[(i, j)] = s_e[(p, q)] + slopes[p] * slopes[q] * var_k;
            }
        }
    }
    Ok(TruncatedGaussianFit {
        mean,
        cov,
        iterations: fit.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn truncated_draws(n: usize, mu: f64, sigma: f64, lo: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = mu + sigma * z;
            if v > lo {
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn recovers_half_normal_parameters() {
        let v = truncated_draws(20_000, 0.0, 1.0, 0.0, 3);
        let fit = fit_truncated_normal(&v, 0.0, f64::INFINITY, BfgsOptions::default()).unwrap();
        assert!(fit.mu.abs() < 0.06, "mu {}", fit.mu);
        assert!((fit.sigma - 1.0).abs() < 0.04, "sigma {}", fit.sigma);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = DVector::from_vec(vec![0.3, -0.2]);
        let (_, g) = objective(&p, 0.8, -0.5, 1.5);
        for i in 0..2 {
            let h = 1e-6;
            let mut up = p.clone();
            up[i] += h;
            let mut dn = p.clone();
            dn[i] -= h;
            let fd = (objective(&up, 0.8, -0.5, 1.5).0 - objective(&dn, 0.8, -0.5, 1.5).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn rejects_points_outside_interval() {
        let e = fit_truncated_normal(&[0.1, 0.2, -0.3], 0.0, 1.0, BfgsOptions::default());
        assert!(matches!(e, Err(EccError::InvalidInput(_))));
    }
}
