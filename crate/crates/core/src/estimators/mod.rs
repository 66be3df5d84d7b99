//! Estimators of event conditional correlation and of unconditional
//! correlation from event-restricted samples.
//!
//! The full-sample estimator combines unconditional moments of `(X, Y)`, the
//! regressions of `X` on `Z1` and `Y` on `Z2`, and the shift between the
//! conditional and unconditional covariance of the covariates. The implied
//! estimator runs the same identity backwards on an A-sample given
//! unconditional covariate moments.

mod diagnostics;
mod population;
mod truncated;

pub use diagnostics::{assumption_diagnostics, covariance_shift, covariance_shift_with_tol, AssumptionDiagnostics, CovarianceShift};
pub use population::{
    conditional_params, ecc_population, implied_from_moments, inverse_shift, partial_correlation, r_entry,
    transport, transport_params, CorrelationParams, ImpliedInputs, ImpliedParts,
};
pub use truncated::{fit_truncated_gaussian, fit_truncated_normal, TruncatedGaussianFit, TruncatedNormalFit};

pub(crate) use population::shift_map;

use crate::error::{EccError, Result};
use crate::events::{event_mask, EventSpec, Interval};
use crate::optim::BfgsOptions;
use crate::sample::Sample;
use crate::stats::{self, mask_rows};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Minimum number of rows an event must select.
pub const MIN_EVENT_ROWS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    FullSampleCorrected,
    Subsample,
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EccEstimate {
    pub rho: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub n_total: usize,
    pub n_event: usize,
    pub method: EstimateMethod,
    /// The raw estimate fell outside `[-1, 1]` and was clamped.
    pub clamped: bool,
}

impl EccEstimate {
    fn new(raw: f64, n_total: usize, n_event: usize, method: EstimateMethod) -> Self {
        let clamped = !(-1.0..=1.0).contains(&raw);
        if clamped {
            log::debug!("clamping {method:?} estimate {raw} into [-1, 1]");
        }
        EccEstimate {
            rho: raw.clamp(-1.0, 1.0),
            se: None,
            ci: None,
            n_total,
            n_event,
            method,
            clamped,
        }
    }
}

/// How conditional covariate moments are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentStrategy {
    /// Sample covariance over the rows where the event holds.
    #[default]
    Empirical,
    /// Gaussian fitted on the whole sample, then truncated to the event.
    GaussianModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Z1,
    Z2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaShift {
    pub delta: DMatrix<f64>,
    pub event_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    /// Slope per covariate, in response units per covariate unit.
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    /// Coefficients were fitted on empirically centered data.
    pub centered: bool,
}

/// Solves `cov * b = rhs` by Cholesky, naming any covariate whose residual
/// variance given the earlier ones vanishes.
pub(crate) fn solve_covariance(cov: &DMatrix<f64>, rhs: &DVector<f64>, names: &[String]) -> Result<DVector<f64>> {
    let k = cov.nrows();
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut bad = Vec::new();
    for j in 0..k {
        let mut pivot = cov[(j, j)];
        for p in 0..j {
            pivot -= l[(j, p)] * l[(j, p)];
        }
        if !(cov[(j, j)] > 0.0) || pivot <= 1e-10 * cov[(j, j)] {
            bad.push(names.get(j).cloned().unwrap_or_else(|| format!("#{j}")));
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..k {
            let mut s = cov[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / d;
        }
    }
    if !bad.is_empty() {
        return Err(EccError::SingularDesign { columns: bad });
    }
    let mut y = rhs.clone();
    for i in 0..k {
        for p in 0..i {
            y[i] -= l[(i, p)] * y[p];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..k).rev() {
        for p in (i + 1)..k {
            y[i] -= l[(p, i)] * y[p];
        }
        y[i] /= l[(i, i)];
    }
    Ok(y)
}

/// Least squares of `response` on `covariates` with an intercept, fitted on
/// centered data.
pub fn ols_fit(sample: &Sample, response: usize, covariates: &[usize]) -> Result<RegressionFit> {
    if covariates.is_empty() {
        return Err(EccError::InvalidInput("no covariates".into()));
    }
    let mut cols: Vec<&[f64]> = covariates.iter().map(|&c| sample.column(c)).collect();
    cols.push(sample.column(response));
    let cov = stats::covariance_matrix(&cols, None);
    let k = covariates.len();
    let names: Vec<String> = covariates.iter().map(|&c| sample.names()[c].clone()).collect();
    let szz = cov.view((0, 0), (k, k)).into_owned();
    let szy = cov.view((0, k), (k, 1)).column(0).into_owned();
    let beta = solve_covariance(&szz, &szy, &names)?;
    let y = sample.column(response);
    let means: Vec<f64> = cols[..k].iter().map(|c| stats::mean(c)).collect();
    let y_mean = stats::mean(y);
    let intercept = y_mean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let residuals = (0..sample.n())
        .map(|r| {
            let fit: f64 = (0..k).map(|j| beta[j] * (cols[j][r] - means[j])).sum();
            (y[r] - y_mean) - fit
        })
        .collect();
    Ok(RegressionFit {
        beta: beta.iter().copied().collect(),
        intercept,
        residuals,
        centered: true,
    })
}

/// Stacked `(Z1, Z2)` columns: distinct column indices plus, for each stacked
/// position, its index into the distinct list.
pub(crate) fn stack_layout(sample: &Sample) -> (Vec<usize>, Vec<usize>) {
    let roles = sample.roles();
    let mut unique: Vec<usize> = Vec::new();
    let mut map = Vec::new();
    for &c in roles.z1.iter().chain(&roles.z2) {
        let pos = match unique.iter().position(|&u| u == c) {
            Some(p) => p,
            None => {
                unique.push(c);
                unique.len() - 1
            }
        };
        map.push(pos);
    }
    (unique, map)
}

pub(crate) fn expand(unique_cov: &DMatrix<f64>, map: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(map.len(), map.len(), |i, j| unique_cov[(map[i], map[j])])
}

fn checked_rows(mask: &[bool]) -> Result<Vec<usize>> {
    let rows = mask_rows(mask);
    if rows.len() < MIN_EVENT_ROWS {
        return Err(EccError::InsufficientEventSample {
            count: rows.len(),
            required: MIN_EVENT_ROWS,
        });
    }
    Ok(rows)
}

/// Covariance of the distinct covariate columns under the event, implied by
/// a Gaussian fitted on the whole sample.
fn gaussian_conditional_cov(sample: &Sample, unique: &[usize], intervals: &[Interval]) -> Result<DMatrix<f64>> {
    let cols: Vec<&[f64]> = unique.iter().map(|&c| sample.column(c)).collect();
    let cov = stats::covariance_matrix(&cols, None);
    let mean: Vec<f64> = cols.iter().map(|c| stats::mean(c)).collect();
    let local = |iv: &Interval| {
        unique.iter().position(|&u| u == iv.column).ok_or_else(|| {
            EccError::InvalidInput(format!(
                "event column '{}' is not a covariate; the Gaussian model needs covariate events",
                sample.names()[iv.column]
            ))
        })
    };
    let positions = intervals.iter().map(local).collect::<Result<Vec<_>>>()?;
    if positions.is_empty() {
        return Ok(cov);
    }
    if positions.iter().all(|&p| p == positions[0]) {
        let k = positions[0];
        let lo = intervals.iter().map(|iv| iv.lo).fold(f64::NEG_INFINITY, f64::max);
        let hi = intervals.iter().map(|iv| iv.hi).fold(f64::INFINITY, f64::min);
        let skk = cov[(k, k)];
        let t = stats::truncated_normal(mean[k], skk.sqrt(), lo, hi);
        if !(t.mass > 0.0) {
            return Err(EccError::DegenerateConditioning("event has zero mass under the fitted Gaussian".into()));
        }
        let c = cov.column(k).into_owned();
        return Ok(&cov + &c * c.transpose() * ((t.variance - skk) / (skk * skk)));
    }
    // Several constrained covariates: fixed-seed Monte Carlo under the fit.
    let d = unique.len();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| EccError::DegenerateConditioning("covariate covariance is singular".into()))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0F_A11);
    let draws = 1usize << 17;
    let mut kept: Vec<Vec<f64>> = vec![Vec::new(); d];
    for _ in 0..draws {
        let e = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let z = &l * e;
        let inside = intervals
            .iter()
            .zip(&positions)
            .all(|(iv, &p)| iv.contains(mean[p] + z[p]));
        if inside {
            for p in 0..d {
                kept[p].push(z[p]);
            }
        }
    }
    if kept[0].len() < 1000 {
        return Err(EccError::DegenerateConditioning(format!(
            "only {} of {draws} model draws satisfy the event",
            kept[0].len()
        )));
    }
    let refs: Vec<&[f64]> = kept.iter().map(Vec::as_slice).collect();
    Ok(stats::covariance_matrix(&refs, None))
}

/// Conditional covariance of the stacked `(Z1, Z2)` block and the event rows.
fn conditional_stack_cov(
    sample: &Sample,
    event: &EventSpec,
    strategy: MomentStrategy,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let mask = event_mask(sample, event)?;
    let rows = checked_rows(&mask)?;
    let (unique, map) = stack_layout(sample);
    let unique_cov = match strategy {
        MomentStrategy::Empirical => {
            let cols: Vec<&[f64]> = unique.iter().map(|&c| sample.column(c)).collect();
            stats::covariance_matrix(&cols, Some(&rows))
        }
        MomentStrategy::GaussianModel => gaussian_conditional_cov(sample, &unique, &event.resolve(sample)?)?,
    };
    Ok((expand(&unique_cov, &map), rows))
}

fn unconditional_stack_cov(sample: &Sample) -> DMatrix<f64> {
    let (unique, map) = stack_layout(sample);
    let cols: Vec<&[f64]> = unique.iter().map(|&c| sample.column(c)).collect();
    expand(&stats::covariance_matrix(&cols, None), &map)
}

/// `cov(Zi, Zj | A) - cov(Zi, Zj)` for the requested covariate blocks.
pub fn delta_shift(
    sample: &Sample,
    event: &EventSpec,
    block_i: Block,
    block_j: Block,
    strategy: MomentStrategy,
) -> Result<DeltaShift> {
    let (cond, rows) = conditional_stack_cov(sample, event, strategy)?;
    let full = unconditional_stack_cov(sample);
    let k1 = sample.roles().z1.len();
    let k2 = sample.roles().z2.len();
    let range = |b: Block| match b {
        Block::Z1 => (0, k1),
        Block::Z2 => (k1, k2),
    };
    let (oi, ni) = range(block_i);
    let (oj, nj) = range(block_j);
    let delta = cond.view((oi, oj), (ni, nj)) - full.view((oi, oj), (ni, nj));
    Ok(DeltaShift {
        delta,
        event_mass: rows.len() as f64 / sample.n() as f64,
    })
}

/// Building blocks of the full-sample estimator.
#[derive(Debug, Clone)]
pub(crate) struct PlugIn {
    pub cov_xy: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub beta_x: DVector<f64>,
    pub beta_y: DVector<f64>,
    pub delta: DMatrix<f64>,
    pub n_event: usize,
}

impl PlugIn {
    pub(crate) fn compute(sample: &Sample, event: &EventSpec, strategy: MomentStrategy) -> Result<Self> {
        let roles = sample.roles();
        let k1 = roles.z1.len();
        let k2 = roles.z2.len();
        let (cond, rows) = conditional_stack_cov(sample, event, strategy)?;
        let full = unconditional_stack_cov(sample);
        let names: Vec<String> = roles
            .z1
            .iter()
            .chain(&roles.z2)
            .map(|&c| sample.names()[c].clone())
            .collect();
        let cov_with = |target: &[f64], zs: &[usize]| {
            DVector::from_iterator(zs.len(), zs.iter().map(|&c| stats::covariance(sample.column(c), target)))
        };
        let x = sample.x();
        let y = sample.y();
        let beta_x = solve_covariance(
            &full.view((0, 0), (k1, k1)).into_owned(),
            &cov_with(x, &roles.z1),
            &names[..k1],
        )?;
        let beta_y = solve_covariance(
            &full.view((k1, k1), (k2, k2)).into_owned(),
            &cov_with(y, &roles.z2),
            &names[k1..],
        )?;
        Ok(PlugIn {
            cov_xy: stats::covariance(x, y),
            var_x: stats::variance(x),
            var_y: stats::variance(y),
            beta_x,
            beta_y,
            delta: cond - full,
            n_event: rows.len(),
        })
    }

    pub(crate) fn raw_rho(&self) -> Result<f64> {
        let k1 = self.beta_x.len();
        let k2 = self.beta_y.len();
        let d11 = self.delta.view((0, 0), (k1, k1));
        let d22 = self.delta.view((k1, k1), (k2, k2));
        let d12 = self.delta.view((0, k1), (k1, k2));
        let num = self.cov_xy + (self.beta_x.transpose() * d12 * &self.beta_y)[(0, 0)];
        let vx = self.var_x + (self.beta_x.transpose() * d11 * &self.beta_x)[(0, 0)];
        let vy = self.var_y + (self.beta_y.transpose() * d22 * &self.beta_y)[(0, 0)];
        if !(vx > 0.0 && vy > 0.0) {
            return Err(EccError::DegenerateConditioning(format!(
                "implied conditional variances ({vx:.3e}, {vy:.3e}) are not positive"
            )));
        }
        Ok(num / (vx.sqrt() * vy.sqrt()))
    }
}

/// Full-sample corrected estimate of `rho_{XY|A}` with empirical conditional
/// covariate moments.
pub fn ecc_estimate(sample: &Sample, event: &EventSpec) -> Result<EccEstimate> {
    ecc_estimate_with(sample, event, MomentStrategy::Empirical)
}

pub fn ecc_estimate_with(sample: &Sample, event: &EventSpec, strategy: MomentStrategy) -> Result<EccEstimate> {
    let plug = PlugIn::compute(sample, event, strategy)?;
    Ok(EccEstimate::new(
        plug.raw_rho()?,
        sample.n(),
        plug.n_event,
        EstimateMethod::FullSampleCorrected,
    ))
}

/// Ordinary correlation of `(X, Y)` over the rows where the event holds.
pub fn ecc_subsample(sample: &Sample, event: &EventSpec) -> Result<EccEstimate> {
    let mask = event_mask(sample, event)?;
    let rows = checked_rows(&mask)?;
    let x = stats::gather(sample.x(), &rows);
    let y = stats::gather(sample.y(), &rows);
    let rho = stats::pearson(&x, &y)
        .ok_or_else(|| EccError::DegenerateConditioning("constant X or Y within the event".into()))?;
    Ok(EccEstimate::new(rho, sample.n(), rows.len(), EstimateMethod::Subsample))
}

/// Where unconditional covariate moments come from when only an A-sample is
/// available.
#[derive(Debug, Clone, PartialEq)]
pub enum MomentSource {
    /// Covariance of the distinct covariate columns, in the order they first
    /// appear in `Z1` then `Z2`.
    Asserted(DMatrix<f64>),
    /// Truncated-Gaussian maximum likelihood; the event must bound exactly one
    /// covariate with numeric limits.
    TruncatedGaussian(EventSpec),
}

impl MomentSource {
    pub fn asserted_variance(variance: f64) -> Self {
        MomentSource::Asserted(DMatrix::from_element(1, 1, variance))
    }
}

#[derive(Debug, Clone)]
pub struct ImpliedFit {
    pub estimate: EccEstimate,
    pub parts: ImpliedParts,
    pub rho_xy_given_a: f64,
    /// Unconditional covariance of the distinct covariates that was used.
    pub cov_z: DMatrix<f64>,
}

fn truncated_moments(a_sample: &Sample, unique: &[usize], event: &EventSpec) -> Result<DMatrix<f64>> {
    let bounds = event.numeric_bounds().ok_or_else(|| {
        EccError::InvalidInput("truncated likelihood needs numeric event bounds, not quantile bands".into())
    })?;
    if bounds.is_empty() {
        return Err(EccError::InvalidInput("truncated likelihood needs a bounded event".into()));
    }
    let column = &bounds[0].0;
    if bounds.iter().any(|b| &b.0 != column) {
        return Err(EccError::InvalidInput(
            "truncated likelihood supports events on a single covariate".into(),
        ));
    }
    let lo = bounds.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    let hi = bounds.iter().map(|b| b.2).fold(f64::INFINITY, f64::min);
    let idx = a_sample
        .column_index(column)
        .ok_or_else(|| EccError::InvalidInput(format!("event column '{column}' not found")))?;
    let k = unique
        .iter()
        .position(|&u| u == idx)
        .ok_or_else(|| EccError::InvalidInput(format!("event column '{column}' is not a covariate")))?;
    let cols: Vec<&[f64]> = unique.iter().map(|&c| a_sample.column(c)).collect();
    Ok(fit_truncated_gaussian(&cols, k, lo, hi, BfgsOptions::default())?.cov)
}

/// Unconditional correlation of `(X, Y)` implied by an A-sample.
pub fn implied_unconditional(a_sample: &Sample, source: &MomentSource) -> Result<EccEstimate> {
    Ok(implied_unconditional_detailed(a_sample, source)?.estimate)
}

pub fn implied_unconditional_detailed(a_sample: &Sample, source: &MomentSource) -> Result<ImpliedFit> {
    let (unique, map) = stack_layout(a_sample);
    let cov_unique = match source {
        MomentSource::Asserted(m) => {
            if m.shape() != (unique.len(), unique.len()) {
                return Err(EccError::DimensionMismatch(format!(
                    "asserted covariance is {}x{}, covariates number {}",
                    m.nrows(),
                    m.ncols(),
                    unique.len()
                )));
            }
            m.clone()
        }
        MomentSource::TruncatedGaussian(event) => truncated_moments(a_sample, &unique, event)?,
    };
    let cols: Vec<&[f64]> = unique.iter().map(|&c| a_sample.column(c)).collect();
    let cov_a = stats::covariance_matrix(&cols, None);
    let corr = |a: &[f64], b: &[f64]| {
        stats::pearson(a, b).ok_or_else(|| EccError::DegenerateConditioning("constant column in A-sample".into()))
    };
    let x = a_sample.x();
    let y = a_sample.y();
    let rho_xy_a = corr(x, y)?;
    let inputs = ImpliedInputs {
        rho_xy_a,
        rho_xz1_a: a_sample.z1().iter().map(|z| corr(x, z)).collect::<Result<_>>()?,
        rho_yz2_a: a_sample.z2().iter().map(|z| corr(y, z)).collect::<Result<_>>()?,
        cov_z_a: expand(&cov_a, &map),
        cov_z: expand(&cov_unique, &map),
    };
    let parts = implied_from_moments(&inputs)?;
    Ok(ImpliedFit {
        estimate: EccEstimate::new(parts.rho_xy, a_sample.n(), a_sample.n(), EstimateMethod::Population),
        parts,
        rho_xy_given_a: rho_xy_a,
        cov_z: cov_unique,
    })
}
