//! Bivariate dependence tests on an A-sample with permutation p-values.
//!
//! `Y` is permuted against the `(X, Z)` rows, so the null keeps the selection
//! structure between `X` and the covariate intact.

use crate::error::{EccError, Result};
use crate::estimators::{implied_unconditional, MomentSource};
use crate::inference::resample_rng;
use crate::par;
use crate::sample::Sample;
use crate::stats::{self, midranks};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    EccImplied,
    Pearson,
    Spearman,
    Kendall,
    Hoeffding,
}

impl TestKind {
    pub const ALL: [TestKind; 5] = [
        TestKind::EccImplied,
        TestKind::Pearson,
        TestKind::Spearman,
        TestKind::Kendall,
        TestKind::Hoeffding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::EccImplied => "ecc-implied",
            TestKind::Pearson => "pearson",
            TestKind::Spearman => "spearman",
            TestKind::Kendall => "kendall",
            TestKind::Hoeffding => "hoeffding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueMethod {
    Permutation,
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Kendall's tau-b by Knight's merge-sort algorithm.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let pairs = |len: u64| len * len.saturating_sub(1) / 2;
    let (mut tied_x, mut tied_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        if x[w[0]] == x[w[1]] {
            run_x += 1;
            if y[w[0]] == y[w[1]] {
                run_xy += 1;
            } else {
                tied_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tied_x += pairs(run_x);
            tied_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tied_x += pairs(run_x);
    tied_xy += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let mut tied_y = 0u64;
    let mut run = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            tied_y += pairs(run);
            run = 1;
        }
    }
    tied_y += pairs(run);

    let n0 = pairs(n as u64);
    let denom = ((n0 - tied_x) as f64 * (n0 - tied_y) as f64).sqrt();
    if denom == 0.0 {
        return None;
    }
    let s = n0 as f64 - tied_x as f64 - tied_y as f64 + tied_xy as f64 - 2.0 * swaps as f64;
    Some(s / denom)
}

/// Stable merge sort returning the number of inversions (equal keys are not
/// inversions).
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Hoeffding's D scaled so that `D(x, x) = 1` without ties; needs `n >= 5`.
pub fn hoeffding_d(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 5 || y.len() != n {
        return None;
    }
    let r = midranks(x);
    let s = midranks(y);
    let distinct = |v: &[f64]| {
        let mut t = v.to_vec();
        t.sort_by(f64::total_cmp);
        t.windows(2).all(|w| w[0] != w[1])
    };
    let q = if distinct(&r) && distinct(&s) {
        bivariate_counts_fast(&r, &s)
    } else {
        bivariate_counts(&r, &s)
    };
    let nf = n as f64;
    let (mut d1, mut d2, mut d3) = (0.0, 0.0, 0.0);
    for i in 0..n {
        d1 += (q[i] - 1.0) * (q[i] - 2.0);
        d2 += (r[i] - 1.0) * (r[i] - 2.0) * (s[i] - 1.0) * (s[i] - 2.0);
        d3 += (r[i] - 2.0) * (s[i] - 2.0) * (q[i] - 1.0);
    }
    let num = (nf - 2.0) * (nf - 3.0) * d1 + d2 - 2.0 * (nf - 2.0) * d3;
    let den = nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0) * (nf - 4.0);
    Some(30.0 * num / den)
}

/// `Q_i = 1 + #{R_j < R_i, S_j < S_i}` plus half and quarter credits for ties.
fn bivariate_counts(r: &[f64], s: &[f64]) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|i| {
            let mut q = 1.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let (lr, er) = (r[j] < r[i], r[j] == r[i]);
                let (ls, es) = (s[j] < s[i], s[j] == s[i]);
                if lr && ls {
                    q += 1.0;
                } else if er && es {
                    q += 0.25;
                } else if (er && ls) || (lr && es) {
                    q += 0.5;
                }
            }
            q
        })
        .collect()
}

/// Tie-free `Q` with a Fenwick tree; ranks are then `1..=n`.
fn bivariate_counts_fast(r: &[f64], s: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| r[a].total_cmp(&r[b]));
    let mut tree = vec![0u32; n + 1];
    let mut q = vec![0.0; n];
    for &i in &order {
        let k = s[i] as usize;
        let mut below = 0u32;
        let mut p = k - 1;
        while p > 0 {
            below += tree[p];
            p &= p - 1;
        }
        q[i] = 1.0 + below as f64;
        let mut p = k;
        while p <= n {
            tree[p] += 1;
            p += p & p.wrapping_neg();
        }
    }
    q
}

struct Context<'a> {
    sample: &'a Sample,
    source: Option<&'a MomentSource>,
    rank_x: Vec<f64>,
}

impl Context<'_> {
    fn statistic(&self, kind: TestKind, y: &[f64], rank_y: &[f64]) -> Result<f64> {
        let x = self.sample.x();
        let undefined = || EccError::UndefinedStatistic(format!("{} is undefined for a constant column", kind.name()));
        match kind {
            TestKind::Pearson => stats::pearson(x, y).ok_or_else(undefined),
            TestKind::Spearman => stats::pearson(&self.rank_x, rank_y).ok_or_else(undefined),
            TestKind::Kendall => kendall_tau(&self.rank_x, rank_y).ok_or_else(undefined),
            TestKind::Hoeffding => {
                if stats::variance(x) == 0.0 || stats::variance(y) == 0.0 {
                    return Err(undefined());
                }
                hoeffding_d(&self.rank_x, rank_y).ok_or_else(undefined)
            }
            TestKind::EccImplied => {
                let source = self.source.ok_or_else(|| {
                    EccError::InvalidInput("the implied test needs unconditional covariate moments".into())
                })?;
                let s = self.sample.with_column(self.sample.roles().y, y.to_vec())?;
                implied_unconditional(&s, source)
                    .map(|e| e.rho)
                    .map_err(|e| match e {
                        EccError::DegenerateConditioning(_) => undefined(),
                        other => other,
                    })
            }
        }
    }
}

/// Runs the five tests with `perms` permutations each (shared across tests).
/// Per-test failures are returned in place so the other tests still report.
pub fn run_tests(
    a_sample: &Sample,
    source: Option<&MomentSource>,
    perms: usize,
    seed: u64,
) -> Result<Vec<(TestKind, Result<TestResult>)>> {
    let n = a_sample.n();
    if n < 20 {
        return Err(EccError::InvalidInput(format!("dependence tests need n >= 20, got {n}")));
    }
    if perms == 0 {
        return Err(EccError::InvalidInput("at least one permutation is required".into()));
    }
    let ctx = Context {
        sample: a_sample,
        source,
        rank_x: midranks(a_sample.x()),
    };
    let y = a_sample.y();
    let rank_y = midranks(y);
    let observed: Vec<Result<f64>> = TestKind::ALL.iter().map(|&k| ctx.statistic(k, y, &rank_y)).collect();

    let draws: Vec<Vec<Option<f64>>> = par::map((0..perms).collect(), |b| {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut resample_rng(seed, b as u64));
        let yp = stats::gather(y, &order);
        let rp = stats::gather(&rank_y, &order);
        TestKind::ALL
            .iter()
            .zip(&observed)
            .map(|(&k, obs)| obs.as_ref().ok().and_then(|_| ctx.statistic(k, &yp, &rp).ok()))
            .collect()
    });

    Ok(TestKind::ALL
        .iter()
        .enumerate()
        .map(|(t, &kind)| {
            let res = observed[t].clone().map(|stat| {
                let tol = 1e-12 * stat.abs().max(1.0);
                let exceed = draws
                    .iter()
                    .filter_map(|d| d[t])
                    .filter(|&v| match kind {
                        TestKind::Hoeffding => v >= stat - tol,
                        _ => v.abs() >= stat.abs() - tol,
                    })
                    .count();
                TestResult {
                    test: kind,
                    statistic: stat,
                    p_value: (1 + exceed) as f64 / (perms + 1) as f64,
                    method: PValueMethod::Permutation,
                }
            });
            (kind, res)
        })
        .collect())
}
