//! Browser bindings for the demo page in `www/`.
//!
//! Every export returns a flat `Float64Array` so the page needs no glue
//! beyond what `wasm-bindgen` generates.

use ecc::estimators::{ecc_estimate, ecc_population, ecc_subsample, CorrelationParams};
use ecc::events::decile_sweep;
use ecc::regression::{fit_piecewise, uniform_grid, PiecewiseOptions};
use ecc::stats::{norm_inv_cdf, truncated_standard_normal};
use ecc::synth::{generate, GenSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Population conditional correlation on `bands` equal-probability bands of
/// a standard normal covariate.
#[wasm_bindgen]
pub fn population_curve(rho_xy: f64, rho_xz: f64, rho_yz: f64, bands: usize) -> Result<Vec<f64>, JsValue> {
    if bands < 2 {
        return Err(js_err("need at least two bands"));
    }
    let base = CorrelationParams::new(rho_xy, rho_xz, rho_yz, 0.0).map_err(js_err)?;
    (0..bands)
        .map(|i| {
            let a = norm_inv_cdf(i as f64 / bands as f64);
            let b = norm_inv_cdf((i + 1) as f64 / bands as f64);
            let delta = truncated_standard_normal(a, b).variance - 1.0;
            ecc_population(&base.with_delta(delta)).map_err(js_err)
        })
        .collect()
}

/// Decile curves estimated from one Gaussian sample: the first ten values are
/// the full-sample corrected estimates, the next ten the subsample ones.
#[wasm_bindgen]
pub fn simulated_curve(rho_xy: f64, rho_xz: f64, rho_yz: f64, n: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
    let spec = GenSpec::gaussian(rho_xy, rho_xz, rho_yz, 1.0, n, seed);
    spec.validate().map_err(js_err)?;
    let sample = generate(&spec).map_err(js_err)?;
    let events: Vec<_> = decile_sweep("z", 0.1).into_iter().map(|(_, e)| e).collect();
    let mut out = Vec::with_capacity(20);
    for e in &events {
        out.push(ecc_estimate(&sample, e).map_err(js_err)?.rho);
    }
    for e in &events {
        out.push(ecc_subsample(&sample, e).map_err(js_err)?.rho);
    }
    Ok(out)
}

/// Piecewise-affine fit of `tanh(x) + noise` with `x` uniform on `[-3, 3]`.
/// Returns `grid_points` triples `(x, tanh x, fitted)` laid out one after
/// another.
#[wasm_bindgen]
pub fn tanh_fit(n: usize, noise_sd: f64, bins: usize, grid_points: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
    if grid_points < 2 {
        return Err(js_err("need at least two grid points"));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(js_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v.tanh() + noise.sample(&mut rng)).collect();
    let opts = PiecewiseOptions {
        n_bins: bins,
        ..Default::default()
    };
    let fit = fit_piecewise(&x, &y, &opts).map_err(js_err)?;
    Ok(uniform_grid(-3.0, 3.0, grid_points)
        .into_iter()
        .flat_map(|g| [g, g.tanh(), fit.predict(g).value])
        .collect())
}
