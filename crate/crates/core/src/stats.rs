//! Moment, quantile and normal-distribution helpers shared by the estimators.
//!
//! All second moments use the unbiased `1/(n-1)` normalization on empirically
//! centered data.

use nalgebra::DMatrix;
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let ma = mean(a);
    let mb = mean(b);
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    s / (a.len() as f64 - 1.0)
}

pub fn variance(a: &[f64]) -> f64 {
    covariance(a, a)
}

/// Sample Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Gathers `values[i]` for every `i` in `rows`.
pub fn gather(values: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| values[i]).collect()
}

/// Indices of the `true` entries of a mask.
pub fn mask_rows(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Covariance matrix of `columns`, optionally restricted to `rows`.
pub fn covariance_matrix(columns: &[&[f64]], rows: Option<&[usize]>) -> DMatrix<f64> {
    let k = columns.len();
    let picked: Vec<Vec<f64>> = match rows {
        Some(r) => columns.iter().map(|c| gather(c, r)).collect(),
        None => columns.iter().map(|c| c.to_vec()).collect(),
    };
    let m = picked.first().map_or(0, Vec::len);
    let means: Vec<f64> = picked.iter().map(|c| mean(c)).collect();
    let mut out = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let mut s = 0.0;
            for t in 0..m {
                s += (picked[i][t] - means[i]) * (picked[j][t] - means[j]);
            }
            let v = s / (m as f64 - 1.0);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Type-7 (linear interpolation) quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let p = p.clamp(0.0, 1.0);
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// Mid-ranks (1-based); ties share the average of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = r;
        }
        i = j;
    }
    ranks
}

/// Fourth standardized moment (3 for a Gaussian).
pub fn kurtosis(values: &[f64]) -> f64 {
    let m = mean(values);
    let n = values.len() as f64;
    let m2 = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

pub fn norm_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

pub fn norm_inv_cdf(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    Normal::standard().inverse_cdf(p)
}

/// `Φ(b) - Φ(a)` computed on whichever tail keeps precision.
pub fn norm_interval_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        norm_sf(a) - norm_sf(b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    }
}

/// Moments of a standard normal truncated to `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn truncated_standard_normal(a: f64, b: f64) -> TruncatedMoments {
    let mass = norm_interval_mass(a, b);
    let (pa, pb) = (norm_pdf(a), norm_pdf(b));
    let apa = if a.is_finite() { a * pa } else { 0.0 };
    let bpb = if b.is_finite() { b * pb } else { 0.0 };
    let mean = (pa - pb) / mass;
    let variance = 1.0 + (apa - bpb) / mass - mean * mean;
    TruncatedMoments {
        mass,
        mean,
        variance,
    }
}

/// Moments of `N(mu, sigma^2)` truncated to `[lo, hi]`.
pub fn truncated_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> TruncatedMoments {
    let t = truncated_standard_normal((lo - mu) / sigma, (hi - mu) / sigma);
    TruncatedMoments {
        mass: t.mass,
        mean: mu + sigma * t.mean,
        variance: sigma * sigma * t.variance,
    }
}

/// SplitMix64 finalizer, used to derive independent seeds from a base seed
/// and task coordinates.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    let mut z = base;
    for &c in coords {
        z = splitmix(z ^ splitmix(c.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(z)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
