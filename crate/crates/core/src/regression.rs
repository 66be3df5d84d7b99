//! Piecewise-affine regression: the support of `X` is cut into bins and each
//! bin gets the slope implied by the full-sample conditional correlation with
//! `X` as its own covariate.

use crate::error::{EccError, Result};
use crate::estimators::ecc_estimate;
use crate::events::{Bound, EventSpec};
use crate::par;
use crate::sample::{Roles, Sample};
use crate::stats;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binning {
    /// Bins of equal length over `[min X, max X]`.
    #[default]
    EqualWidth,
    /// Bins holding (about) the same number of rows.
    EqualCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseOptions {
    pub n_bins: usize,
    pub binning: Binning,
    pub min_occupancy: usize,
}

impl Default for PiecewiseOptions {
    fn default() -> Self {
        PiecewiseOptions {
            n_bins: 20,
            binning: Binning::EqualWidth,
            min_occupancy: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Conditional mean of `Y` in the bin.
    pub mean_y: f64,
    /// Conditional mean of `X` in the bin.
    pub mean_x: f64,
    pub rho: f64,
    pub slope: f64,
}

impl AffineBin {
    pub fn eval(&self, x: f64) -> f64 {
        self.mean_y + self.slope * (x - self.mean_x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseAffineFit {
    pub bins: Vec<AffineBin>,
    /// Number of under-occupied bins that were merged into a neighbour.
    pub merges: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub value: f64,
    /// `x` was outside the fitted range and the nearest piece was extended.
    pub extrapolated: bool,
}

fn initial_edges(x: &[f64], opts: &PiecewiseOptions) -> Vec<f64> {
    let k = opts.n_bins;
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    match opts.binning {
        Binning::EqualWidth => (0..=k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect(),
        Binning::EqualCount => {
            let mut s = x.to_vec();
            s.sort_by(f64::total_cmp);
            let mut e: Vec<f64> = (0..=k).map(|i| stats::quantile_sorted(&s, i as f64 / k as f64)).collect();
            e.dedup();
            e
        }
    }
}

fn bin_counts(x: &[f64], edges: &[f64]) -> Vec<usize> {
    let k = edges.len() - 1;
    let mut counts = vec![0; k];
    for &v in x {
        counts[locate(edges, v)] += 1;
    }
    counts
}

/// Bin index of `v`: bins are `[e_i, e_{i+1})`, the last one closed.
fn locate(edges: &[f64], v: f64) -> usize {
    let k = edges.len() - 1;
    edges[1..k].partition_point(|&e| e <= v)
}

pub fn fit_piecewise(x: &[f64], y: &[f64], opts: &PiecewiseOptions) -> Result<PiecewiseAffineFit> {
    if x.len() != y.len() {
        return Err(EccError::DimensionMismatch(format!("{} x values, {} y values", x.len(), y.len())));
    }
    if opts.n_bins < 2 {
        return Err(EccError::InvalidInput("at least 2 bins are required".into()));
    }
    let sample = Sample::new(
        vec!["x".into(), "y".into()],
        vec![x.to_vec(), y.to_vec()],
        Roles::shared(0, 1, vec![0]),
    )?;
    let min_occ = opts.min_occupancy.max(3);
    let mut edges = initial_edges(x, opts);
    let mut merges = 0;
    loop {
        if edges.len() < 3 {
            return Err(EccError::InvalidInput(format!(
                "merging under-occupied bins left fewer than 2 bins (need {min_occ} rows per bin)"
            )));
        }
        let counts = bin_counts(x, &edges);
        let Some(i) = (0..counts.len()).filter(|&i| counts[i] < min_occ).min_by_key(|&i| counts[i]) else {
            break;
        };
        // drop the boundary shared with the emptier neighbour
        let last = counts.len() - 1;
        let drop = if i == 0 {
            1
        } else if i == last || counts[i - 1] <= counts[i + 1] {
            i
        } else {
            i + 1
        };
        edges.remove(drop);
        merges += 1;
    }
    if merges > 0 {
        log::info!("merged {merges} under-occupied bins");
    }

    let k = edges.len() - 1;
    let bins = par::map((0..k).collect(), |i| {
        let lo = if i == 0 { f64::NEG_INFINITY } else { edges[i] };
        let hi = if i == k - 1 { f64::INFINITY } else { edges[i + 1] };
        let event = EventSpec::rectangle(vec![Bound {
            column: "x".into(),
            lo,
            hi,
        }])?;
        let rows: Vec<usize> = (0..x.len()).filter(|&r| locate(&edges, x[r]) == i).collect();
        let xa = stats::gather(x, &rows);
        let ya = stats::gather(y, &rows);
        let sd_x = stats::variance(&xa).sqrt();
        if !(sd_x > 0.0) {
            return Err(EccError::DegenerateConditioning(format!("X is constant in bin {i}")));
        }
        let sd_y = stats::variance(&ya).sqrt();
        let rho = if sd_y > 0.0 { ecc_estimate(&sample, &event)?.rho } else { 0.0 };
        Ok(AffineBin {
            lo: edges[i],
            hi: edges[i + 1],
            count: rows.len(),
            mean_y: stats::mean(&ya),
            mean_x: stats::mean(&xa),
            rho,
            slope: rho * sd_y / sd_x,
        })
    });
    Ok(PiecewiseAffineFit {
        bins: bins.into_iter().collect::<Result<_>>()?,
        merges,
    })
}

impl PiecewiseAffineFit {
    pub fn predict(&self, x: f64) -> Prediction {
        let first = &self.bins[0];
        let last = &self.bins[self.bins.len() - 1];
        if x < first.lo {
            return Prediction {
                value: first.eval(x),
                extrapolated: true,
            };
        }
        if x > last.hi {
            return Prediction {
                value: last.eval(x),
                extrapolated: true,
            };
        }
        let i = self.bins[1..].partition_point(|b| b.lo <= x);
        Prediction {
            value: self.bins[i].eval(x),
            extrapolated: false,
        }
    }

    /// Root mean squared deviation from `truth` over `grid`.
    pub fn rmse<F: Fn(f64) -> f64>(&self, truth: F, grid: &[f64]) -> f64 {
        let sse: f64 = grid.iter().map(|&g| (self.predict(g).value - truth(g)).powi(2)).sum();
        (sse / grid.len() as f64).sqrt()
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
