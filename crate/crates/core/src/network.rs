//! Regime-split partial-correlation networks.
//!
//! Panels hold pre-whitened residual columns and covariate columns. Rows are
//! split into a stable and a crisis regime on one covariate. Each regime
//! yields a conditional network, a corrected (unconditional) network, and the
//! stable regime can be transported to a hypothetical covariate variance to
//! build a counterfactual network.

use crate::error::{EccError, Result};
use crate::estimators::{implied_unconditional, MomentSource};
use crate::inference::resample_rng;
use crate::par;
use crate::sample::{Roles, Sample};
use crate::stats;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub dates: Vec<String>,
    pub names: Vec<String>,
    /// Residual columns, `p` of length `n`.
    pub residuals: Vec<Vec<f64>>,
    pub covariate_names: Vec<String>,
    /// Covariate columns, `q` of length `n`.
    pub covariates: Vec<Vec<f64>>,
}

impl Panel {
    pub fn new(
        dates: Vec<String>,
        names: Vec<String>,
        residuals: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = dates.len();
        if residuals.len() < 3 {
            return Err(EccError::InvalidInput(format!("need at least 3 residual columns, got {}", residuals.len())));
        }
        if covariates.is_empty() {
            return Err(EccError::InvalidInput("need at least one covariate".into()));
        }
        if names.len() != residuals.len() || covariate_names.len() != covariates.len() {
            return Err(EccError::DimensionMismatch("column names do not match column count".into()));
        }
        if residuals.iter().chain(&covariates).any(|c| c.len() != n) {
            return Err(EccError::DimensionMismatch("columns differ in length from the date index".into()));
        }
        if residuals.iter().chain(&covariates).any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(EccError::InvalidInput("panel has missing or non-finite values".into()));
        }
        Ok(Panel {
            dates,
            names,
            residuals,
            covariate_names,
            covariates,
        })
    }

    pub fn n(&self) -> usize {
        self.dates.len()
    }

    pub fn p(&self) -> usize {
        self.residuals.len()
    }

    pub fn q(&self) -> usize {
        self.covariates.len()
    }

    /// Same panel restricted to (possibly repeated) rows.
    pub fn select_rows(&self, rows: &[usize]) -> Panel {
        Panel {
            dates: rows.iter().map(|&r| self.dates[r].clone()).collect(),
            names: self.names.clone(),
            residuals: self.residuals.iter().map(|c| stats::gather(c, rows)).collect(),
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.iter().map(|c| stats::gather(c, rows)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Regimes {
    pub stable: Vec<usize>,
    pub crisis: Vec<usize>,
    pub threshold: f64,
}

/// Crisis rows are those where covariate `column` is at or above its
/// empirical `quantile`.
pub fn split_regimes(panel: &Panel, column: usize, quantile: f64) -> Result<Regimes> {
    if column >= panel.q() {
        return Err(EccError::InvalidInput(format!("no covariate {column}")));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(EccError::InvalidInput(format!("quantile {quantile} outside [0, 1]")));
    }
    let w = &panel.covariates[column];
    let threshold = stats::quantile(w, quantile);
    let (crisis, stable): (Vec<usize>, Vec<usize>) = (0..panel.n()).partition(|&r| w[r] >= threshold);
    if crisis.is_empty() || (stable.is_empty() && quantile > 0.0) {
        return Err(EccError::InsufficientEventSample {
            count: 0,
            required: 1,
        });
    }
    Ok(Regimes {
        stable,
        crisis,
        threshold,
    })
}

fn cov_to_corr(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(EccError::DegenerateConditioning("a column has zero variance in the regime".into()));
    }
    Ok(DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] / (d[i] * d[j])
        }
    }))
}

fn residual_refs(panel: &Panel) -> Vec<&[f64]> {
    panel.residuals.iter().map(Vec::as_slice).collect()
}

fn covariate_refs(panel: &Panel) -> Vec<&[f64]> {
    panel.covariates.iter().map(Vec::as_slice).collect()
}

/// Ordinary correlation matrix of the residuals over `rows`.
pub fn conditional_correlation_matrix(panel: &Panel, rows: &[usize]) -> Result<DMatrix<f64>> {
    if rows.len() < 3 {
        return Err(EccError::InsufficientEventSample {
            count: rows.len(),
            required: 3,
        });
    }
    cov_to_corr(&stats::covariance_matrix(&residual_refs(panel), Some(rows)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedMatrix {
    pub matrix: DMatrix<f64>,
    /// Spectral norm of the change made by eigenvalue clipping.
    pub clipping: f64,
    /// Entries whose correction failed and fell back to the regime
    /// correlation.
    pub failed_entries: usize,
}

/// Nearest-in-spectrum correlation matrix: symmetrize, floor the eigenvalues
/// and rescale to unit diagonal. Returns the matrix and the change's
/// spectral norm.
pub fn clip_to_correlation(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= floor {
        let change = (&sym - m).amax();
        return (sym, change);
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let d: Vec<f64> = rebuilt.diagonal().iter().map(|v| v.sqrt()).collect();
    let out = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if i == j {
            1.0
        } else {
            rebuilt[(i, j)] / (d[i] * d[j])
        }
    });
    let change = (&out - m).svd(false, false).singular_values.max();
    (out, change)
}

/// Entrywise implied unconditional correlations over `rows`, with every
/// covariate on both sides and unconditional covariate moments `cov_w`.
pub fn corrected_correlation_matrix(panel: &Panel, rows: &[usize], cov_w: &DMatrix<f64>) -> Result<CorrectedMatrix> {
    let (p, q) = (panel.p(), panel.q());
    if rows.len() < q + 3 {
        return Err(EccError::InsufficientEventSample {
            count: rows.len(),
            required: q + 3,
        });
    }
    if cov_w.shape() != (q, q) {
        return Err(EccError::DimensionMismatch(format!("covariate covariance must be {q}x{q}")));
    }
    let sub = panel.select_rows(rows);
    let cond = conditional_correlation_matrix(&sub, &(0..rows.len()).collect::<Vec<_>>())?;
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).collect();
    let source = MomentSource::Asserted(cov_w.clone());
    let z: Vec<usize> = (2..2 + q).collect();
    let values = par::map(pairs.clone(), |(i, j)| {
        let mut cols = vec![sub.residuals[i].clone(), sub.residuals[j].clone()];
        cols.extend(sub.covariates.iter().cloned());
        let names = (0..cols.len()).map(|k| format!("c{k}")).collect();
        let s = Sample::new(names, cols, Roles::shared(0, 1, z.clone()))?;
        Ok::<f64, EccError>(implied_unconditional(&s, &source)?.rho)
    });
    let mut m = DMatrix::identity(p, p);
    let mut failed = 0;
    for ((i, j), v) in pairs.iter().zip(values) {
        let v = match v {
            Ok(v) => v,
            Err(e) => {
                log::warn!("correction of entry ({i}, {j}) failed: {e}");
                failed += 1;
                cond[(*i, *j)]
            }
        };
        m[(*i, *j)] = v;
        m[(*j, *i)] = v;
    }
    if failed * 20 > pairs.len() {
        return Err(EccError::StudyFailure {
            failed,
            total: pairs.len(),
        });
    }
    let (matrix, clipping) = clip_to_correlation(&m, 1e-6);
    Ok(CorrectedMatrix {
        matrix,
        clipping,
        failed_entries: failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeLabel {
    Stable,
    Crisis,
    Counterfactual,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// Partial correlations with zero diagonal.
    pub weights: DMatrix<f64>,
    pub label: RegimeLabel,
    /// Ridge added to the diagonal when the matrix could not be inverted.
    pub ridge: Option<f64>,
}

/// `-P_ij / sqrt(P_ii P_jj)` with `P` the inverse correlation matrix.
pub fn partial_correlation_network(corr: &DMatrix<f64>, label: RegimeLabel) -> Result<Network> {
    if !corr.is_square() {
        return Err(EccError::DimensionMismatch("correlation matrix must be square".into()));
    }
    let p = corr.nrows();
    let (prec, ridge) = match corr.clone().cholesky() {
        Some(c) => (c.inverse(), None),
        None => {
            let lambda = 1e-8 * corr.diagonal().mean().abs().max(1e-300);
            let reg = corr + DMatrix::identity(p, p) * lambda;
            let c = reg
                .cholesky()
                .ok_or_else(|| EccError::DegenerateConditioning("correlation matrix is not positive definite".into()))?;
            log::warn!("added ridge {lambda:.1e} before inverting the correlation matrix");
            (c.inverse(), Some(lambda))
        }
    };
    let weights = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            0.0
        } else {
            (-prec[(i, j)] / (prec[(i, i)] * prec[(j, j)]).sqrt()).clamp(-1.0, 1.0)
        }
    });
    Ok(Network { weights, label, ridge })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CentralityNorm {
    /// Unit Euclidean length.
    #[default]
    L2,
    /// Scores sum to one.
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentralityStats {
    pub scores: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub eigenvalue: f64,
    pub iterations: usize,
}

/// Leading eigenvector of `|weights|` by power iteration on `|W| + cI`, where
/// the shift `c` keeps bipartite graphs from oscillating.
pub fn eigenvector_centrality(network: &Network, norm: CentralityNorm) -> Result<CentralityStats> {
    let m = network.weights.map(f64::abs);
    let p = m.nrows();
    let shift = m.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    let finish = |v: DVector<f64>, iterations: usize| {
        let v = match norm {
            CentralityNorm::L2 => &v / v.norm(),
            CentralityNorm::L1 => &v / v.sum(),
        };
        let eigenvalue = v.dot(&(&m * &v)) / v.dot(&v);
        let scores: Vec<f64> = v.iter().copied().collect();
        CentralityStats {
            mean: stats::mean(&scores),
            sd: stats::variance(&scores).sqrt(),
            scores,
            eigenvalue,
            iterations,
        }
    };
    let mut v = DVector::from_element(p, 1.0 / (p as f64).sqrt());
    if shift == 0.0 {
        return Ok(finish(v, 0));
    }
    let shifted = &m + DMatrix::identity(p, p) * shift;
    for it in 1..=10_000 {
        let mut next = &shifted * &v;
        next /= next.norm();
        let diff = (&next - &v).amax();
        v = next;
        if diff < 1e-10 {
            return Ok(finish(v, it));
        }
    }
    Err(EccError::NonConvergence { iterations: 10_000 })
}

/// Covariance of the covariates over `rows`.
pub fn covariate_covariance(panel: &Panel, rows: Option<&[usize]>) -> DMatrix<f64> {
    stats::covariance_matrix(&covariate_refs(panel), rows)
}

/// Stable-regime dependence moved to the covariate covariance
/// `S + scale (C - S)`, where `S` and `C` are the stable and crisis covariate
/// covariances: the residual covariance gains `B (target - S) B'` with `B`
/// the stable-regime regression of residuals on covariates.
pub fn counterfactual_correlation(panel: &Panel, regimes: &Regimes, scale: f64) -> Result<DMatrix<f64>> {
    let (p, q) = (panel.p(), panel.q());
    let rows = &regimes.stable;
    if rows.len() < q + 3 || regimes.crisis.len() < q + 3 {
        return Err(EccError::InsufficientEventSample {
            count: rows.len().min(regimes.crisis.len()),
            required: q + 3,
        });
    }
    let mut all = covariate_refs(panel);
    all.extend(residual_refs(panel));
    let joint = stats::covariance_matrix(&all, Some(rows));
    let s_ww = joint.view((0, 0), (q, q)).into_owned();
    let s_xw = joint.view((q, 0), (p, q)).into_owned();
    let s_xx = joint.view((q, q), (p, p)).into_owned();
    let c_ww = covariate_covariance(panel, Some(&regimes.crisis));
    let shift = (&c_ww - &s_ww) * scale;
    let inv = s_ww
        .clone()
        .cholesky()
        .ok_or_else(|| EccError::DegenerateConditioning("stable covariate covariance is singular".into()))?
        .inverse();
    let b = &s_xw * inv;
    let target = &s_xx + &b * shift * b.transpose();
    let corr = cov_to_corr(&target)?;
    Ok((&corr + corr.transpose()) * 0.5)
}

pub fn counterfactual_network(panel: &Panel, regimes: &Regimes, scale: f64) -> Result<Network> {
    partial_correlation_network(&counterfactual_correlation(panel, regimes, scale)?, RegimeLabel::Counterfactual)
}

/// Which network a bootstrap replicate rebuilds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    Stable,
    Crisis,
    StableCorrected,
    CrisisCorrected,
    Counterfactual { scale: f64 },
}

pub fn build_network(panel: &Panel, regimes: &Regimes, kind: NetworkKind) -> Result<Network> {
    let cov_w = || covariate_covariance(panel, None);
    match kind {
        NetworkKind::Stable => partial_correlation_network(
            &conditional_correlation_matrix(panel, &regimes.stable)?,
            RegimeLabel::Stable,
        ),
        NetworkKind::Crisis => partial_correlation_network(
            &conditional_correlation_matrix(panel, &regimes.crisis)?,
            RegimeLabel::Crisis,
        ),
        NetworkKind::StableCorrected => partial_correlation_network(
            &corrected_correlation_matrix(panel, &regimes.stable, &cov_w())?.matrix,
            RegimeLabel::Stable,
        ),
        NetworkKind::CrisisCorrected => partial_correlation_network(
            &corrected_correlation_matrix(panel, &regimes.crisis, &cov_w())?.matrix,
            RegimeLabel::Crisis,
        ),
        NetworkKind::Counterfactual { scale } => counterfactual_network(panel, regimes, scale),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentralityBootstrap {
    /// `(mean, sd)` of the centrality scores per replicate.
    pub draws: Vec<(f64, f64)>,
    pub mean_ci: (f64, f64),
    pub sd_ci: (f64, f64),
    pub level: f64,
}

/// Resamples rows within each regime independently and recomputes the
/// centrality summary of the chosen network.
pub fn bootstrap_centrality(
    panel: &Panel,
    regimes: &Regimes,
    kind: NetworkKind,
    norm: CentralityNorm,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<CentralityBootstrap> {
    if b == 0 || !(level > 0.0 && level < 1.0) {
        return Err(EccError::InvalidInput("bootstrap needs b >= 1 and a level in (0, 1)".into()));
    }
    let draws = par::map((0..b).collect(), |i| {
        let mut rng = resample_rng(seed, i as u64);
        let mut pick = |rows: &[usize]| -> Vec<usize> { (0..rows.len()).map(|_| rows[rng.random_range(0..rows.len())]).collect() };
        let stable = pick(&regimes.stable);
        let crisis = pick(&regimes.crisis);
        let mut rows = stable.clone();
        rows.extend(&crisis);
        let sub = panel.select_rows(&rows);
        let local = Regimes {
            stable: (0..stable.len()).collect(),
            crisis: (stable.len()..rows.len()).collect(),
            threshold: regimes.threshold,
        };
        let c = eigenvector_centrality(&build_network(&sub, &local, kind)?, norm)?;
        Ok((c.mean, c.sd))
    });
    let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
    let ci = |f: fn(&(f64, f64)) -> f64| {
        let mut v: Vec<f64> = draws.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        let a = (1.0 - level) / 2.0;
        (stats::quantile_sorted(&v, a), stats::quantile_sorted(&v, 1.0 - a))
    };
    Ok(CentralityBootstrap {
        mean_ci: ci(|d| d.0),
        sd_ci: ci(|d| d.1),
        draws,
        level,
    })
}

/// One-factor synthetic panel: `x_i = loading_i * w + noise_i * e_i` with an
/// exponential covariate `w` (memoryless, so the upper tail has the same
/// variance as the whole law and more than the bulk). With `contagion`, rows
/// whose `w` exceeds its population `crisis_quantile` also load on a hidden
/// common factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPanelSpec {
    pub n: usize,
    pub loadings: Vec<f64>,
    pub noise_sd: Vec<f64>,
    pub contagion: Option<Vec<f64>>,
    pub crisis_quantile: f64,
    pub seed: u64,
}

impl FactorPanelSpec {
    /// `p` nodes with loadings spread over `[0.3, 1.2]` and unit noise.
    pub fn standard(n: usize, p: usize, seed: u64) -> Self {
        FactorPanelSpec {
            n,
            loadings: (0..p).map(|i| 0.3 + 0.9 * i as f64 / (p.max(2) - 1) as f64).collect(),
            noise_sd: vec![1.0; p],
            contagion: None,
            crisis_quantile: 0.75,
            seed,
        }
    }

    /// Residual covariance given `w` with the stated variance and no
    /// contagion.
    pub fn residual_covariance(&self, var_w: f64) -> DMatrix<f64> {
        let p = self.loadings.len();
        DMatrix::from_fn(p, p, |i, j| {
            self.loadings[i] * self.loadings[j] * var_w + if i == j { self.noise_sd[i].powi(2) } else { 0.0 }
        })
    }
}

pub fn generate_factor_panel(spec: &FactorPanelSpec) -> Result<Panel> {
    let p = spec.loadings.len();
    if p < 3 || spec.noise_sd.len() != p || spec.contagion.as_ref().is_some_and(|c| c.len() != p) {
        return Err(EccError::InvalidInput("factor panel needs p >= 3 and matching loadings".into()));
    }
    let cut = -(1.0 - spec.crisis_quantile).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut w = Vec::with_capacity(spec.n);
    let mut x = vec![Vec::with_capacity(spec.n); p];
    for _ in 0..spec.n {
        let wv: f64 = Exp1.sample(&mut rng);
        let hidden: f64 = StandardNormal.sample(&mut rng);
        for i in 0..p {
            let e: f64 = StandardNormal.sample(&mut rng);
            let mut v = spec.loadings[i] * wv + spec.noise_sd[i] * e;
            if let Some(c) = &spec.contagion {
                if wv >= cut {
                    v += c[i] * hidden;
                }
            }
            x[i].push(v);
        }
        w.push(wv);
    }
    Panel::new(
        (0..spec.n).map(|d| format!("t{d:06}")).collect(),
        (0..p).map(|i| format!("r{i}")).collect(),
        x,
        vec!["w".into()],
        vec![w],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(m: DMatrix<f64>) -> Network {
        Network {
            weights: m,
            label: RegimeLabel::Full,
            ridge: None,
        }
    }

    #[test]
    fn complete_graph_is_uniform() {
        let p = 5;
        let m = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { 0.3 });
        let c = eigenvector_centrality(&net(m.clone()), CentralityNorm::L1).unwrap();
        assert!(c.scores.iter().all(|s| (s - 0.2).abs() < 1e-12));
        let c2 = eigenvector_centrality(&net(m), CentralityNorm::L2).unwrap();
        assert!(c2.scores.iter().all(|s| (s - 1.0 / 5f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn star_center_dominates() {
        let p = 6;
        let m = DMatrix::from_fn(p, p, |i, j| if i != j && (i == 0 || j == 0) { 0.5 } else { 0.0 });
        let c = eigenvector_centrality(&net(m), CentralityNorm::L2).unwrap();
        assert!(c.scores[1..].iter().all(|&s| s < c.scores[0]));
    }

    #[test]
    fn diagonal_correlation_gives_empty_network() {
        let n = partial_correlation_network(&DMatrix::identity(4, 4), RegimeLabel::Full).unwrap();
        assert!(n.weights.iter().all(|&v| v == 0.0));
        assert!(n.ridge.is_none());
    }

    #[test]
    fn singular_matrix_gets_ridge() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let n = partial_correlation_network(&m, RegimeLabel::Full).unwrap();
        assert!(n.ridge.is_some());
    }

    #[test]
    fn quantile_zero_puts_everything_in_crisis() {
        let panel = generate_factor_panel(&FactorPanelSpec::standard(100, 3, 1)).unwrap();
        let r = split_regimes(&panel, 0, 0.0).unwrap();
        assert_eq!(r.crisis.len(), 100);
        assert!(r.stable.is_empty());
    }

    #[test]
    fn clipping_repairs_indefinite_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, 0.9, 0.9, 1.0, -0.9, 0.9, -0.9, 1.0]);
        let (c, change) = clip_to_correlation(&m, 1e-6);
        assert!(SymmetricEigen::new(c.clone()).eigenvalues.min() > 0.0);
        assert!(c.diagonal().iter().all(|&d| (d - 1.0).abs() < 1e-12));
        assert!(change > 0.0);
    }
}
