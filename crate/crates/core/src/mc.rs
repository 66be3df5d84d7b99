//! Small-sample studies: RMSE of conditional-correlation curves and of
//! implied unconditional correlations against ground truth.

use crate::error::{EccError, Result};
use crate::estimators::{ecc_estimate, ecc_subsample, implied_unconditional, MomentSource};
use crate::events::{decile_sweep, event_mask, Bound, EventSpec};
use crate::par;
use crate::sample::Sample;
use crate::stats::{self, derive_seed};
use crate::synth::{self, Family, GenSpec, Theta};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Full-sample corrected estimator (or the implied-unconditional inverse).
    Proposed,
    /// Plain correlation over the event rows.
    Subsample,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Proposed => "proposed",
            Method::Subsample => "subsample",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Estimate the conditional correlation on every quantile band of `z`.
    EccCurve,
    /// Recover the unconditional correlation from each band's rows alone.
    /// Sample sizes count the rows of one band (the A-sample), so each
    /// replication draws `n / band_width` rows.
    ImpliedUnconditional,
}

/// Source of the unconditional covariate variance in the implied task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImpliedMoments {
    /// The generator's true variance `eta`.
    Asserted,
    /// Truncated-normal likelihood on each band; outer bands are treated as
    /// half-lines.
    TruncatedMle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub family: Family,
    pub theta: Theta,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub task: Task,
    pub seed: u64,
    /// Width of the quantile bands swept over `z`.
    pub band_width: f64,
    pub implied_moments: ImpliedMoments,
}

impl StudySpec {
    pub fn new(family: Family, theta: Theta, sample_sizes: Vec<usize>, replications: usize, task: Task, seed: u64) -> Self {
        StudySpec {
            family,
            theta,
            sample_sizes,
            replications,
            methods: vec![Method::Proposed, Method::Subsample],
            task,
            seed,
            band_width: 0.1,
            implied_moments: ImpliedMoments::Asserted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(EccError::InvalidInput("replications must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EccError::InvalidInput("sample sizes must be non-empty and strictly increasing".into()));
        }
        if self.methods.is_empty() {
            return Err(EccError::InvalidInput("no methods requested".into()));
        }
        let k = 1.0 / self.band_width;
        if !(self.band_width > 0.0 && self.band_width <= 1.0) || (k - k.round()).abs() > 1e-9 {
            return Err(EccError::InvalidInput(format!(
                "band width {} must divide 1",
                self.band_width
            )));
        }
        GenSpec::new(self.family, self.theta, 0, 0).validate()
    }

    fn bands(&self) -> Vec<EventSpec> {
        decile_sweep("z", self.band_width).into_iter().map(|(_, e)| e).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyCell {
    pub method: Method,
    pub n: usize,
    pub rmse: f64,
    /// Estimates that errored and were left out of the RMSE.
    pub failures: usize,
    pub estimates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub cells: Vec<StudyCell>,
    /// Truth per band (conditional correlations, or the unconditional value
    /// repeated).
    pub truth: Vec<f64>,
    pub replications: usize,
}

impl StudyResult {
    /// RMSE sequence over the sample sizes for one method.
    pub fn rmse_curve(&self, method: Method) -> Vec<(usize, f64)> {
        self.cells
            .iter()
            .filter(|c| c.method == method)
            .map(|c| (c.n, c.rmse))
            .collect()
    }
}

/// Least-squares slope of `ln rmse` on `ln n`.
pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let lx: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    stats::covariance(&lx, &ly) / stats::variance(&lx)
}

pub fn run_study(spec: &StudySpec) -> Result<StudyResult> {
    spec.validate()?;
    let bands = spec.bands();
    let truth: Vec<f64> = match spec.task {
        Task::EccCurve => synth::oracle_curve(&GenSpec::new(spec.family, spec.theta, 0, spec.seed), &bands)?
            .iter()
            .map(|o| o.value)
            .collect(),
        Task::ImpliedUnconditional => vec![spec.theta.rho_xy; bands.len()],
    };
    let (family, theta) = (spec.family, spec.theta);
    run_study_with(spec, |n, seed| synth::generate(&GenSpec::new(family, theta, n, seed)), &truth)
}

/// Study over a custom generator `(n, seed) -> sample` with columns named
/// `x`, `y`, `z` and known per-band truth.
pub fn run_study_with<G>(spec: &StudySpec, generate: G, truth: &[f64]) -> Result<StudyResult>
where
    G: Fn(usize, u64) -> Result<Sample> + Sync + Send,
{
    if spec.replications == 0 || spec.sample_sizes.is_empty() || spec.methods.is_empty() {
        return Err(EccError::InvalidInput("empty study".into()));
    }
    let bands = spec.bands();
    if truth.len() != bands.len() {
        return Err(EccError::DimensionMismatch(format!(
            "{} truth values for {} bands",
            truth.len(),
            bands.len()
        )));
    }
    // errors[rep][size][method][band]
    let per_rep: Vec<Result<Vec<Vec<Vec<Option<f64>>>>>> = par::map((0..spec.replications).collect(), |rep| {
        spec.sample_sizes
            .iter()
            .map(|&n| {
                let seed = derive_seed(spec.seed, &[n as u64, rep as u64]);
                let rows = match spec.task {
                    Task::EccCurve => n,
                    Task::ImpliedUnconditional => n * bands.len(),
                };
                let sample = generate(rows, seed)?;
                Ok(spec
                    .methods
                    .iter()
                    .map(|&m| {
                        bands
                            .iter()
                            .enumerate()
                            .map(|(j, band)| estimate_band(spec, &sample, band, j, m).ok().map(|v| v - truth[j]))
                            .collect()
                    })
                    .collect())
            })
            .collect()
    });
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut failed = 0;
    let mut total = 0;
    for (mi, &method) in spec.methods.iter().enumerate() {
        for (si, &n) in spec.sample_sizes.iter().enumerate() {
            let errs: Vec<Option<f64>> = per_rep.iter().flat_map(|r| r[si][mi].iter().copied()).collect();
            let ok: Vec<f64> = errs.iter().flatten().copied().collect();
            let failures = errs.len() - ok.len();
            failed += failures;
            total += errs.len();
            let rmse = if ok.is_empty() {
                f64::NAN
            } else {
                (ok.iter().map(|e| e * e).sum::<f64>() / ok.len() as f64).sqrt()
            };
            cells.push(StudyCell {
                method,
                n,
                rmse,
                failures,
                estimates: errs.len(),
            });
        }
    }
    if failed * 20 > total {
        return Err(EccError::StudyFailure { failed, total });
    }
    if failed > 0 {
        log::warn!("{failed} of {total} estimates failed and were excluded");
    }
    Ok(StudyResult {
        cells,
        truth: truth.to_vec(),
        replications: spec.replications,
    })
}

fn estimate_band(spec: &StudySpec, sample: &Sample, band: &EventSpec, j: usize, method: Method) -> Result<f64> {
    match (spec.task, method) {
        (Task::EccCurve, Method::Proposed) => Ok(ecc_estimate(sample, band)?.rho),
        (Task::EccCurve, Method::Subsample) => Ok(ecc_subsample(sample, band)?.rho),
        (Task::ImpliedUnconditional, m) => {
            let a_sample = sample.restrict(&event_mask(sample, band)?)?;
            match m {
                Method::Subsample => stats::pearson(a_sample.x(), a_sample.y())
                    .ok_or_else(|| EccError::DegenerateConditioning("constant band".into())),
                Method::Proposed => {
                    let source = match spec.implied_moments {
                        ImpliedMoments::Asserted => MomentSource::asserted_variance(spec.theta.eta),
                        ImpliedMoments::TruncatedMle => {
                            let iv = band.resolve(sample)?[0];
                            let last = (1.0 / spec.band_width).round() as usize - 1;
                            let lo = if j == 0 { f64::NEG_INFINITY } else { iv.lo };
                            let hi = if j == last { f64::INFINITY } else { iv.hi };
                            MomentSource::TruncatedGaussian(EventSpec::rectangle(vec![Bound {
                                column: "z".into(),
                                lo,
                                hi,
                            }])?)
                        }
                    };
                    Ok(implied_unconditional(&a_sample, &source)?.rho)
                }
            }
        }
    }
}
