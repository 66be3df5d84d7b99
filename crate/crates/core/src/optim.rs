//! Small dense BFGS minimizer with backtracking line search.

use crate::error::{EccError, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            grad_tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

/// Minimizes `f`, which returns the objective and its gradient. Non-finite
/// objective values are treated as infeasible and trigger backtracking.
pub fn minimize<F>(f: F, x0: DVector<f64>, opts: BfgsOptions) -> Result<BfgsResult>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return Err(EccError::InvalidInput("objective is not finite at the start point".into()));
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut trace = vec![fx];
    for iter in 0..opts.max_iter {
        if g.norm() < opts.grad_tol {
            return Ok(BfgsResult {
                x,
                value: fx,
                iterations: iter,
                trace,
            });
        }
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let (mut x_new, mut f_new, mut g_new);
        loop {
            x_new = &x + &dir * step;
            let (fv, gv) = f(&x_new);
            f_new = fv;
            g_new = gv;
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(EccError::OptimizationFailure {
                    iterations: iter,
                    grad_norm: g.norm(),
                    trace,
                });
            }
        }
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
    }
    if g.norm() < opts.grad_tol {
        return Ok(BfgsResult {
            x,
            value: fx,
            iterations: opts.max_iter,
            trace,
        });
    }
    Err(EccError::OptimizationFailure {
        iterations: opts.max_iter,
        grad_norm: g.norm(),
        trace,
    })
}
