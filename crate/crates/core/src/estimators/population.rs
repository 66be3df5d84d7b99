//! Closed-form population identities linking conditional and unconditional
//! correlation through the normalized covariate-variance shift.

use crate::error::{EccError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Scalar-covariate parameter bundle `(rho_xy, rho_xz, rho_yz, delta)`.
///
/// `delta` is the normalized variance shift `var(Z|A)/var(Z) - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationParams {
    pub rho_xy: f64,
    pub rho_xz: f64,
    pub rho_yz: f64,
    pub delta: f64,
}

impl CorrelationParams {
    pub fn new(rho_xy: f64, rho_xz: f64, rho_yz: f64, delta: f64) -> Result<Self> {
        let p = CorrelationParams {
            rho_xy,
            rho_xz,
            rho_yz,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("rho_xy", self.rho_xy), ("rho_xz", self.rho_xz), ("rho_yz", self.rho_yz)] {
            if !(r.abs() < 1.0) {
                return Err(EccError::InvalidInput(format!("{name} = {r} outside (-1, 1)")));
            }
        }
        if !(self.delta >= -1.0) || !self.delta.is_finite() {
            return Err(EccError::InvalidInput(format!("delta = {} below -1", self.delta)));
        }
        if correlation_determinant(self.rho_xy, self.rho_xz, self.rho_yz) < -1e-12 {
            return Err(EccError::InvalidInput(
                "correlations do not form a positive semidefinite matrix".into(),
            ));
        }
        Ok(())
    }

    pub fn with_delta(self, delta: f64) -> Self {
        CorrelationParams { delta, ..self }
    }
}

pub(crate) fn correlation_determinant(a: f64, b: f64, c: f64) -> f64 {
    1.0 + 2.0 * a * b * c - a * a - b * b - c * c
}

/// `(a + b c d) / sqrt((1 + b^2 d)(1 + c^2 d))`, the common form of the forward,
/// inverse and transport identities.
pub(crate) fn shift_map(a: f64, b: f64, c: f64, d: f64) -> Result<f64> {
    let u = 1.0 + b * b * d;
    let v = 1.0 + c * c * d;
    if !(u > 0.0 && v > 0.0) {
        return Err(EccError::DegenerateConditioning(format!(
            "non-positive variance factor ({u:.3e}, {v:.3e})"
        )));
    }
    Ok((a + b * c * d) / (u.sqrt() * v.sqrt()))
}

/// Event conditional correlation implied by unconditional correlations and
/// the normalized variance shift of the covariate.
pub fn ecc_population(params: &CorrelationParams) -> Result<f64> {
    shift_map(params.rho_xy, params.rho_xz, params.rho_yz, params.delta)
}

/// Partial correlation of X and Y given Z.
pub fn partial_correlation(rho_xy: f64, rho_xz: f64, rho_yz: f64) -> f64 {
    (rho_xy - rho_xz * rho_yz) / ((1.0 - rho_xz * rho_xz) * (1.0 - rho_yz * rho_yz)).sqrt()
}

/// Correlation between X (or Y) and the covariate itself under the shift.
fn covariate_correlation(rho: f64, delta: f64) -> Result<f64> {
    shift_map(rho, rho, 1.0, delta)
}

/// Moves correlations measured under event `A` to event `A'`, where
/// `delta_tilde = var(Z|A')/var(Z|A) - 1`; the `delta` field of `under_a` is
/// not read.
pub fn transport(under_a: &CorrelationParams, delta_tilde: f64) -> Result<f64> {
    shift_map(under_a.rho_xy, under_a.rho_xz, under_a.rho_yz, delta_tilde)
}

/// Full transported triple; the returned `delta` records `delta_tilde`.
pub fn transport_params(under_a: &CorrelationParams, delta_tilde: f64) -> Result<CorrelationParams> {
    Ok(CorrelationParams {
        rho_xy: transport(under_a, delta_tilde)?,
        rho_xz: covariate_correlation(under_a.rho_xz, delta_tilde)?,
        rho_yz: covariate_correlation(under_a.rho_yz, delta_tilde)?,
        delta: delta_tilde,
    })
}

/// Conditional triple `(rho_xy|A, rho_xz|A, rho_yz|A)` implied by unconditional
/// parameters; `delta` carries over.
pub fn conditional_params(params: &CorrelationParams) -> Result<CorrelationParams> {
    Ok(transport_params(params, params.delta)?.with_delta(params.delta))
}

/// Shift seen from inside `A`: `var(Z)/var(Z|A) - 1` for a forward shift `delta`.
pub fn inverse_shift(delta: f64) -> f64 {
    1.0 / (1.0 + delta) - 1.0
}

/// Entry of an R-vector: an unconditional covariate correlation recovered
/// from its conditional value and the covariate's variance ratio.
pub fn r_entry(rho_given_a: f64, variance_ratio: f64) -> Result<f64> {
    let denom = 1.0 + (variance_ratio - 1.0) * (1.0 - rho_given_a * rho_given_a);
    if !(denom > 0.0) {
        return Err(EccError::DegenerateConditioning(format!(
            "R-vector denominator {denom:.3e} is not positive"
        )));
    }
    let r = rho_given_a / denom.sqrt();
    if !r.is_finite() {
        return Err(EccError::DegenerateConditioning("non-finite R-vector entry".into()));
    }
    Ok(r)
}

/// Conditional quantities measured on an A-sample together with unconditional
/// covariate moments. Covariance matrices are over the stacked block
/// `(Z1, Z2)` of size `k1 + k2`.
#[derive(Debug, Clone)]
pub struct ImpliedInputs {
    pub rho_xy_a: f64,
    pub rho_xz1_a: Vec<f64>,
    pub rho_yz2_a: Vec<f64>,
    pub cov_z_a: DMatrix<f64>,
    pub cov_z: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ImpliedParts {
    pub rho_xy: f64,
    pub r_x: Vec<f64>,
    pub r_y: Vec<f64>,
    /// Normalized shifts `(11, 22, 12)`.
    pub delta_bar: (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>),
}

fn invert(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| EccError::DegenerateConditioning(format!("{what} covariance is not positive definite")))
}

/// Unconditional correlation recovered from an A-sample.
pub fn implied_from_moments(inp: &ImpliedInputs) -> Result<ImpliedParts> {
    let k1 = inp.rho_xz1_a.len();
    let k2 = inp.rho_yz2_a.len();
    let k = k1 + k2;
    if inp.cov_z.shape() != (k, k) || inp.cov_z_a.shape() != (k, k) {
        return Err(EccError::DimensionMismatch(format!(
            "covariate covariance must be {k}x{k}"
        )));
    }
    let delta = &inp.cov_z_a - &inp.cov_z;
    let s11 = inp.cov_z.view((0, 0), (k1, k1)).into_owned();
    let s22 = inp.cov_z.view((k1, k1), (k2, k2)).into_owned();
    let inv1 = invert(&s11, "Z1")?;
    let inv2 = invert(&s22, "Z2")?;
    let d1 = DMatrix::from_diagonal(&s11.diagonal().map(f64::sqrt));
    let d2 = DMatrix::from_diagonal(&s22.diagonal().map(f64::sqrt));
    let norm = |di: &DMatrix<f64>, ii: &DMatrix<f64>, dij: DMatrix<f64>, ij: &DMatrix<f64>, dj: &DMatrix<f64>| {
        di * ii * dij * ij * dj
    };
    let db11 = norm(&d1, &inv1, delta.view((0, 0), (k1, k1)).into_owned(), &inv1, &d1);
    let db22 = norm(&d2, &inv2, delta.view((k1, k1), (k2, k2)).into_owned(), &inv2, &d2);
    let db12 = norm(&d1, &inv1, delta.view((0, k1), (k1, k2)).into_owned(), &inv2, &d2);

    let r_x = (0..k1)
        .map(|i| r_entry(inp.rho_xz1_a[i], inp.cov_z_a[(i, i)] / inp.cov_z[(i, i)]))
        .collect::<Result<Vec<_>>>()?;
    let r_y = (0..k2)
        .map(|j| {
            let jj = k1 + j;
            r_entry(inp.rho_yz2_a[j], inp.cov_z_a[(jj, jj)] / inp.cov_z[(jj, jj)])
        })
        .collect::<Result<Vec<_>>>()?;
    let rx = DVector::from_column_slice(&r_x);
    let ry = DVector::from_column_slice(&r_y);
    let fx = 1.0 + (rx.transpose() * &db11 * &rx)[(0, 0)];
    let fy = 1.0 + (ry.transpose() * &db22 * &ry)[(0, 0)];
    if !(fx > 0.0 && fy > 0.0) {
        return Err(EccError::DegenerateConditioning(format!(
            "non-positive scale factor ({fx:.3e}, {fy:.3e})"
        )));
    }
    let cross = (rx.transpose() * &db12 * &ry)[(0, 0)];
    let rho_xy = inp.rho_xy_a * fx.sqrt() * fy.sqrt() - cross;
    Ok(ImpliedParts {
        rho_xy,
        r_x,
        r_y,
        delta_bar: (db11, db22, db12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_is_identity() {
        let p = CorrelationParams::new(0.6, 0.7, 0.8, 0.0).unwrap();
        assert_eq!(ecc_population(&p).unwrap(), 0.6);
    }

    #[test]
    fn uninformative_covariate() {
        let p = CorrelationParams::new(0.3, 0.0, 0.0, -0.7).unwrap();
        assert_eq!(ecc_population(&p).unwrap(), 0.3);
    }

    #[test]
    fn full_collapse_is_partial_correlation() {
        let p = CorrelationParams::new(0.6, 0.7, 0.8, -1.0).unwrap();
        let v = ecc_population(&p).unwrap();
        // (0.6 - 0.56) / sqrt(0.51 * 0.36)
        assert!((v - 0.04 / (0.51f64 * 0.36).sqrt()).abs() < 1e-15);
        assert!((v - 0.0933).abs() < 1e-4);
    }

    #[test]
    fn non_psd_rejected() {
        assert!(CorrelationParams::new(-0.9, 0.9, 0.9, 0.0).is_err());
    }

    #[test]
    fn degenerate_denominator() {
        // bypass validation: delta < -1 makes the variance factor negative
        let p = CorrelationParams {
            rho_xy: 0.1,
            rho_xz: 0.9,
            rho_yz: 0.2,
            delta: -2.0,
        };
        assert!(matches!(ecc_population(&p), Err(EccError::DegenerateConditioning(_))));
    }

    #[test]
    fn scalar_theorem_two_inverts_forward_map() {
        let p = CorrelationParams::new(0.2, 0.4, 0.6, -0.8).unwrap();
        let c = conditional_params(&p).unwrap();
        let inp = ImpliedInputs {
            rho_xy_a: c.rho_xy,
            rho_xz1_a: vec![c.rho_xz],
            rho_yz2_a: vec![c.rho_yz],
            cov_z_a: DMatrix::from_element(2, 2, 0.2 * 2.0),
            cov_z: DMatrix::from_element(2, 2, 2.0),
        };
        let out = implied_from_moments(&inp).unwrap();
        assert!((out.rho_xy - 0.2).abs() < 1e-12);
        assert!((out.r_x[0] - 0.4).abs() < 1e-12);
        assert!((out.r_y[0] - 0.6).abs() < 1e-12);
    }
}
