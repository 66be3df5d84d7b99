use super::{ols_fit, stack_layout, expand};
use crate::error::{EccError, Result};
use crate::events::{event_mask, EventSpec};
use crate::sample::Sample;
use crate::stats::{self, gather, mask_rows};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

/// Sample discrepancies for the two identifying assumptions of the
/// full-sample estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionDiagnostics {
    /// `|cov(eX, eY | A) - cov(eX, eY)|` for the regression residuals.
    pub a1_gap: f64,
    /// `|cov(Z1 bX, eY | A) + cov(Z2 bY, eX | A)|`.
    pub a2_gap: f64,
    /// Spectral norm of the covariate covariance shift; the bias when the
    /// first assumption fails scales with its inverse square.
    pub bias_bound_scale: f64,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().fold(0.0, |a: f64, &b| a.max(b))
}

pub fn assumption_diagnostics(sample: &Sample, event: &EventSpec) -> Result<AssumptionDiagnostics> {
    let roles = sample.roles();
    let mask = event_mask(sample, event)?;
    let rows = mask_rows(&mask);
    if rows.len() < super::MIN_EVENT_ROWS {
        return Err(EccError::InsufficientEventSample {
            count: rows.len(),
            required: super::MIN_EVENT_ROWS,
        });
    }
    let fx = ols_fit(sample, roles.x, &roles.z1)?;
    let fy = ols_fit(sample, roles.y, &roles.z2)?;
    let lin_x: Vec<f64> = sample.x().iter().zip(&fx.residuals).map(|(v, e)| v - e).collect();
    let lin_y: Vec<f64> = sample.y().iter().zip(&fy.residuals).map(|(v, e)| v - e).collect();

    let ex_a = gather(&fx.residuals, &rows);
    let ey_a = gather(&fy.residuals, &rows);
    let a1_gap = (stats::covariance(&ex_a, &ey_a) - stats::covariance(&fx.residuals, &fy.residuals)).abs();
    let a2_gap = (stats::covariance(&gather(&lin_x, &rows), &ey_a)
        + stats::covariance(&gather(&lin_y, &rows), &ex_a))
    .abs();

    let (unique, map) = stack_layout(sample);
    let cols: Vec<&[f64]> = unique.iter().map(|&c| sample.column(c)).collect();
    let shift = expand(&stats::covariance_matrix(&cols, Some(&rows)), &map)
        - expand(&stats::covariance_matrix(&cols, None), &map);
    Ok(AssumptionDiagnostics {
        a1_gap,
        a2_gap,
        bias_bound_scale: spectral_norm(&shift),
    })
}

/// Difference between an unconditional and a conditional covariance matrix
/// and its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceShift {
    pub delta: DMatrix<f64>,
    /// Singular values, largest first.
    pub singular_values: Vec<f64>,
    /// Singular values above the relative tolerance.
    pub effective_rank: usize,
    pub z_dim: usize,
}

impl CovarianceShift {
    /// Whether the shift respects the rank bound `rank <= dim(Z)`.
    pub fn within_rank_bound(&self) -> bool {
        self.effective_rank <= self.z_dim
    }
}

pub fn covariance_shift(sigma: &DMatrix<f64>, sigma_a: &DMatrix<f64>, z_dim: usize) -> Result<CovarianceShift> {
    covariance_shift_with_tol(sigma, sigma_a, z_dim, 1e-8)
}

pub fn covariance_shift_with_tol(
    sigma: &DMatrix<f64>,
    sigma_a: &DMatrix<f64>,
    z_dim: usize,
    rel_tol: f64,
) -> Result<CovarianceShift> {
    if !sigma.is_square() || sigma.shape() != sigma_a.shape() {
        return Err(EccError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            sigma.shape(),
            sigma_a.shape()
        )));
    }
    let asym = |m: &DMatrix<f64>| (m - m.transpose()).amax() > 1e-9 * m.amax().max(1.0);
    if asym(sigma) || asym(sigma_a) {
        return Err(EccError::InvalidInput("covariance matrices must be symmetric".into()));
    }
    let delta = sigma - sigma_a;
    let mut singular_values: Vec<f64> = SymmetricEigen::new(delta.clone())
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let top = singular_values.first().copied().unwrap_or(0.0);
    let effective_rank = if top > 0.0 {
        singular_values.iter().filter(|&&s| s > rel_tol * top).count()
    } else {
        0
    };
    Ok(CovarianceShift {
        delta,
        singular_values,
        effective_rank,
        z_dim,
    })
}
