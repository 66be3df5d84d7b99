//! Standard errors and confidence intervals: delta method for the scalar
//! covariate case and the row bootstrap for every estimator.

use crate::error::{EccError, Result};
use crate::estimators::{ecc_estimate, shift_map, EccEstimate};
use crate::events::{event_mask, EventSpec};
use crate::par;
use crate::sample::Sample;
use crate::stats::{self, mask_rows};
use nalgebra::{Matrix4, RowVector4, SymmetricEigen, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// `phi(a, b, c, d) = (a + b c d) / sqrt((1 + b^2 d)(1 + c^2 d))` with
/// `theta = (rho_xy, rho_xz, rho_yz, delta)`.
pub fn phi(theta: &[f64; 4]) -> Result<f64> {
    let [a, b, c, d] = *theta;
    shift_map(a, b, c, d)
}

pub fn phi_gradient(theta: &[f64; 4]) -> Result<[f64; 4]> {
    let [a, b, c, d] = *theta;
    let u = 1.0 + b * b * d;
    let v = 1.0 + c * c * d;
    if !(u > 0.0 && v > 0.0) {
        return Err(EccError::DegenerateConditioning(format!(
            "1 + b^2 d = {u:.3e} and 1 + c^2 d = {v:.3e} must be positive"
        )));
    }
    let s = (u * v).sqrt();
    let num = a + b * c * d;
    Ok([
        1.0 / s,
        c * d / s - num * b * d / (u * s),
        b * d / s - num * c * d / (v * s),
        b * c / s - 0.5 * num * (b * b / u + c * c / v) / s,
    ])
}

/// Parameter estimate with its asymptotic covariance (of `sqrt(n)` times the
/// estimation error) and the sample size it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaBundle {
    pub theta: [f64; 4],
    pub sigma_theta: Matrix4<f64>,
    pub n: usize,
}

impl ThetaBundle {
    pub fn new(theta: [f64; 4], sigma_theta: Matrix4<f64>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(EccError::InvalidInput("sample size must be positive".into()));
        }
        let scale = sigma_theta.amax().max(1e-300);
        if (sigma_theta - sigma_theta.transpose()).amax() > 1e-10 * scale {
            return Err(EccError::InvalidInput("sigma_theta must be symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(sigma_theta).eigenvalues.min();
        if min_eig < -1e-10 * scale {
            return Err(EccError::InvalidInput(format!(
                "sigma_theta is not positive semidefinite (eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(ThetaBundle {
            theta,
            sigma_theta,
            n,
        })
    }

    /// Plug-in `theta` and its influence-function covariance for a sample
    /// with one covariate shared by both sides.
    pub fn estimate(sample: &Sample, event: &EventSpec) -> Result<Self> {
        let roles = sample.roles();
        if roles.z1.len() != 1 || roles.z1 != roles.z2 {
            return Err(EccError::InvalidInput(
                "analytic standard errors need a single covariate shared by X and Y; use the bootstrap".into(),
            ));
        }
        let rows = mask_rows(&event_mask(sample, event)?);
        if rows.len() < crate::estimators::MIN_EVENT_ROWS {
            return Err(EccError::InsufficientEventSample {
                count: rows.len(),
                required: crate::estimators::MIN_EVENT_ROWS,
            });
        }
        let n = sample.n();
        let (x, y, z) = (sample.x(), sample.y(), sample.column(roles.z1[0]));
        let standardize = |v: &[f64]| {
            let m = stats::mean(v);
            let s = stats::variance(v).sqrt();
            v.iter().map(|t| (t - m) / s).collect::<Vec<f64>>()
        };
        let (xs, ys, zs) = (standardize(x), standardize(y), standardize(z));
        let corr = |a: &[f64], b: &[f64]| {
            stats::pearson(a, b).ok_or_else(|| EccError::DegenerateConditioning("constant column".into()))
        };
        let (r_xy, r_xz, r_yz) = (corr(x, y)?, corr(x, z)?, corr(y, z)?);

        let z_mean = stats::mean(z);
        let var = stats::variance(z);
        let za = stats::gather(z, &rows);
        let mean_a = stats::mean(&za);
        let var_a = stats::variance(&za);
        if !(var > 0.0 && var_a > 0.0) {
            return Err(EccError::DegenerateConditioning("covariate has no variance within the event".into()));
        }
        let delta = var_a / var - 1.0;
        let p = rows.len() as f64 / n as f64;
        let mut in_a = vec![false; n];
        for &r in &rows {
            in_a[r] = true;
        }

        let mut acc = Matrix4::<f64>::zeros();
        for i in 0..n {
            let f_corr = |a: f64, b: f64, r: f64| a * b - 0.5 * r * (a * a + b * b);
            let if_v = (z[i] - z_mean).powi(2) - var;
            let if_va = if in_a[i] {
                ((z[i] - mean_a).powi(2) - var_a) / p
            } else {
                0.0
            };
            let g = Vector4::new(
                f_corr(xs[i], ys[i], r_xy),
                f_corr(xs[i], zs[i], r_xz),
                f_corr(ys[i], zs[i], r_yz),
                (var_a / var) * (if_va / var_a - if_v / var),
            );
            acc += g * g.transpose();
        }
        let sigma = acc / n as f64;
        ThetaBundle::new([r_xy, r_xz, r_yz, delta], (sigma + sigma.transpose()) * 0.5, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaSe {
    pub se: f64,
    /// The quadratic form came out negative and was clipped to zero.
    pub clipped: bool,
}

/// `sqrt(grad phi * Sigma_theta * grad phi' / n)`.
pub fn delta_method_se(bundle: &ThetaBundle) -> Result<DeltaSe> {
    let g = RowVector4::from(phi_gradient(&bundle.theta)?);
    let q = (g * bundle.sigma_theta * g.transpose())[(0, 0)];
    if q < 0.0 {
        log::warn!("negative delta-method variance {q:.3e} clipped to zero");
        return Ok(DeltaSe { se: 0.0, clipped: true });
    }
    Ok(DeltaSe {
        se: (q / bundle.n as f64).sqrt(),
        clipped: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    Delta,
    BootstrapPercentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ci {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
    pub method: CiMethod,
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EccError::InvalidInput(format!("confidence level {level} must lie in (0, 1)")));
    }
    Ok(())
}

/// Full-sample estimate with delta-method standard error and interval.
pub fn ecc_estimate_delta(sample: &Sample, event: &EventSpec, level: f64) -> Result<EccEstimate> {
    check_level(level)?;
    let mut est = ecc_estimate(sample, event)?;
    let bundle = ThetaBundle::estimate(sample, event)?;
    let se = delta_method_se(&bundle)?.se;
    let half = stats::norm_inv_cdf(0.5 + level / 2.0) * se;
    est.se = Some(se);
    est.ci = Some(((est.rho - half).max(-1.0), (est.rho + half).min(1.0)));
    Ok(est)
}

/// Percentile interval over `b` whole-row resamples; replicate `i` draws from
/// its own ChaCha stream so results do not depend on scheduling.
pub fn bootstrap_ci<F>(sample: &Sample, event: &EventSpec, estimator: F, b: usize, level: f64, seed: u64) -> Result<Ci>
where
    F: Fn(&Sample, &EventSpec) -> Result<EccEstimate> + Sync + Send,
{
    let draws = bootstrap_replicates(sample, b, seed, |s| estimator(s, event).map(|e| e.rho))?;
    check_level(level)?;
    let mut ok: Vec<f64> = draws.into_iter().flatten().collect();
    ok.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(Ci {
        level,
        lo: stats::quantile_sorted(&ok, alpha),
        hi: stats::quantile_sorted(&ok, 1.0 - alpha),
        method: CiMethod::BootstrapPercentile,
    })
}

/// Runs `stat` on `b` row resamples. Fails when more than 10% of replicates
/// fail; otherwise failed replicates are `None`.
pub fn bootstrap_replicates<T, F>(sample: &Sample, b: usize, seed: u64, stat: F) -> Result<Vec<Option<T>>>
where
    T: Send,
    F: Fn(&Sample) -> Result<T> + Sync + Send,
{
    if b < 100 {
        return Err(EccError::InvalidInput(format!("bootstrap needs at least 100 replicates, got {b}")));
    }
    let n = sample.n();
    let out = par::map((0..b).collect(), |i| {
        let mut rng = resample_rng(seed, i as u64);
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        stat(&sample.select_rows(&rows)).ok()
    });
    let failures = out.iter().filter(|o| o.is_none()).count();
    if failures * 10 > b {
        return Err(EccError::UnstableBootstrap {
            failures,
            replicates: b,
        });
    }
    Ok(out)
}

/// RNG for replicate `index`: the seed picks the key, the index the stream.
pub fn resample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_identities() {
        assert_eq!(phi(&[0.6, 0.7, 0.8, 0.0]).unwrap(), 0.6);
        assert_eq!(phi(&[0.3, 0.0, 0.0, 2.5]).unwrap(), 0.3);
        let g = phi_gradient(&[0.3, 0.0, 0.0, 2.5]).unwrap();
        assert_eq!(g, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_covariance_gives_zero_se() {
        let b = ThetaBundle::new([0.5, 0.2, 0.1, -0.3], Matrix4::zeros(), 100).unwrap();
        assert_eq!(delta_method_se(&b).unwrap().se, 0.0);
    }

    #[test]
    fn identity_covariance_at_origin() {
        let b = ThetaBundle::new([0.0; 4], Matrix4::identity(), 400).unwrap();
        assert!((delta_method_se(&b).unwrap().se - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = -1.0;
        assert!(ThetaBundle::new([0.0; 4], m, 10).is_err());
    }

    #[test]
    fn small_bootstrap_rejected() {
        let s = Sample::xyz(vec![1.0, 2.0, 3.0], vec![1.0, 3.0, 2.0], vec![0.0, 1.0, 2.0]).unwrap();
        assert!(bootstrap_ci(&s, &EventSpec::All, ecc_estimate, 99, 0.95, 1).is_err());
    }
}
