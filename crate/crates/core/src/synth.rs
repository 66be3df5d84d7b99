//! Seeded trivariate generators and ground-truth conditional correlations.
//!
//! Three elliptical families share a correlation matrix built from
//! `(rho_xy, rho_xz, rho_yz)`:
//!
//! * `GaussianScale(eta)`: normal with common variance `eta`;
//! * `StudentT(eta)`: Gaussian scale mixture `g * sqrt(eta / W)`, `W ~ chi2(eta)`;
//! * `GaussianChisqMixture(eta)`: `g * sqrt(V)`, `V ~ chi2(eta)` drawn per row and
//!   shared by the three coordinates.
//!
//! All coordinates have the same marginal law, so population quantiles do not
//! depend on the column.

use crate::error::{EccError, Result};
use crate::estimators::{ecc_population, CorrelationParams};
use crate::events::EventSpec;
use crate::sample::Sample;
use crate::stats::{self, derive_seed};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared as ChiSqDist, ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GaussianScale,
    StudentT,
    GaussianChisqMixture,
}

impl std::str::FromStr for Family {
    type Err = EccError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "normal" | "gaussian-scale" => Ok(Family::GaussianScale),
            "t" | "student-t" => Ok(Family::StudentT),
            "chisq" | "gaussian-chisq-mixture" => Ok(Family::GaussianChisqMixture),
            _ => Err(EccError::InvalidInput(format!("unknown family '{s}'"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::GaussianScale => "gaussian",
            Family::StudentT => "student-t",
            Family::GaussianChisqMixture => "chisq",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub rho_xy: f64,
    pub rho_xz: f64,
    pub rho_yz: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub family: Family,
    pub theta: Theta,
    pub n: usize,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(family: Family, theta: Theta, n: usize, seed: u64) -> Self {
        GenSpec {
            family,
            theta,
            n,
            seed,
        }
    }

    pub fn gaussian(rho_xy: f64, rho_xz: f64, rho_yz: f64, eta: f64, n: usize, seed: u64) -> Self {
        GenSpec::new(
            Family::GaussianScale,
            Theta {
                rho_xy,
                rho_xz,
                rho_yz,
                eta,
            },
            n,
            seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.theta;
        if !(t.eta > 0.0) || !t.eta.is_finite() {
            return Err(EccError::InvalidInput(format!("eta = {} must be positive", t.eta)));
        }
        if self.family == Family::StudentT && t.eta <= 2.0 {
            return Err(EccError::InvalidInput(
                "student-t needs more than 2 degrees of freedom for finite variance".into(),
            ));
        }
        self.cholesky().map(|_| ())
    }

    fn cholesky(&self) -> Result<Matrix3<f64>> {
        let t = &self.theta;
        let r = Matrix3::new(
            1.0, t.rho_xy, t.rho_xz, //
            t.rho_xy, 1.0, t.rho_yz, //
            t.rho_xz, t.rho_yz, 1.0,
        );
        r.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| EccError::InvalidInput("theta does not give a positive definite correlation matrix".into()))
    }
}

/// Row generator shared by `generate` and the streaming oracle.
struct RowSource {
    family: Family,
    eta: f64,
    l: Matrix3<f64>,
    chi: Option<ChiSquared<f64>>,
}

impl RowSource {
    fn new(spec: &GenSpec) -> Result<Self> {
        spec.validate()?;
        let chi = match spec.family {
            Family::GaussianScale => None,
            _ => Some(ChiSquared::new(spec.theta.eta).map_err(|e| EccError::InvalidInput(e.to_string()))?),
        };
        Ok(RowSource {
            family: spec.family,
            eta: spec.theta.eta,
            l: spec.cholesky()?,
            chi,
        })
    }

    #[inline]
    fn draw<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        let e0: f64 = StandardNormal.sample(rng);
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let l = &self.l;
        let g = [
            l[(0, 0)] * e0,
            l[(1, 0)] * e0 + l[(1, 1)] * e1,
            l[(2, 0)] * e0 + l[(2, 1)] * e1 + l[(2, 2)] * e2,
        ];
        let scale = match self.family {
            Family::GaussianScale => self.eta.sqrt(),
            Family::StudentT => (self.eta / self.chi.as_ref().unwrap().sample(rng)).sqrt(),
            Family::GaussianChisqMixture => self.chi.as_ref().unwrap().sample(rng).sqrt(),
        };
        [g[0] * scale, g[1] * scale, g[2] * scale]
    }
}

/// `n` i.i.d. rows `(x, y, z)`, deterministic in the seed.
pub fn generate(spec: &GenSpec) -> Result<Sample> {
    let src = RowSource::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cols = [
        Vec::with_capacity(spec.n),
        Vec::with_capacity(spec.n),
        Vec::with_capacity(spec.n),
    ];
    for _ in 0..spec.n {
        let r = src.draw(&mut rng);
        for k in 0..3 {
            cols[k].push(r[k]);
        }
    }
    let [x, y, z] = cols;
    Sample::xyz(x, y, z)
}

/// Marginal CDF shared by the three coordinates.
pub fn marginal_cdf(family: Family, eta: f64, v: f64) -> f64 {
    match family {
        Family::GaussianScale => stats::norm_cdf(v / eta.sqrt()),
        Family::StudentT => StudentsT::new(0.0, 1.0, eta).map(|t| t.cdf(v)).unwrap_or(f64::NAN),
        Family::GaussianChisqMixture => {
            // E[Phi(v / sqrt(V))] by midpoint rule in the chi-square probability scale
            let chi = ChiSqDist::new(eta).expect("eta > 0");
            let k = 4000;
            (0..k)
                .map(|i| {
                    let s = chi.inverse_cdf((i as f64 + 0.5) / k as f64);
                    stats::norm_cdf(v / s.sqrt())
                })
                .sum::<f64>()
                / k as f64
        }
    }
}

/// Population quantile of a coordinate.
pub fn marginal_quantile(family: Family, eta: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    match family {
        Family::GaussianScale => eta.sqrt() * stats::norm_inv_cdf(p),
        Family::StudentT => StudentsT::new(0.0, 1.0, eta).map(|t| t.inverse_cdf(p)).unwrap_or(f64::NAN),
        Family::GaussianChisqMixture => {
            let (mut lo, mut hi) = (-1.0, 1.0);
            while marginal_cdf(family, eta, lo) > p {
                lo *= 2.0;
            }
            while marginal_cdf(family, eta, hi) < p {
                hi *= 2.0;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if marginal_cdf(family, eta, mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// Population-scale bounds of an event: `(column, lo, hi)` with column
/// 0 = x, 1 = y, 2 = z.
pub fn population_bounds(family: Family, eta: f64, event: &EventSpec) -> Result<Vec<(usize, f64, f64)>> {
    let col = |name: &str| match name {
        "x" => Ok(0),
        "y" => Ok(1),
        "z" => Ok(2),
        other => Err(EccError::InvalidInput(format!("unknown column '{other}'"))),
    };
    Ok(match event {
        EventSpec::All => vec![],
        EventSpec::Above { column, threshold } => vec![(col(column)?, *threshold, f64::INFINITY)],
        EventSpec::Below { column, threshold } => vec![(col(column)?, f64::NEG_INFINITY, *threshold)],
        EventSpec::QuantileBand { column, upper, width } => {
            let lower = ((upper - width) * 1e12).round() / 1e12;
            vec![(
                col(column)?,
                marginal_quantile(family, eta, lower),
                marginal_quantile(family, eta, *upper),
            )]
        }
        EventSpec::Rectangle(b) => b
            .iter()
            .map(|b| Ok((col(&b.column)?, b.lo, b.hi)))
            .collect::<Result<_>>()?,
    })
}

/// Ground-truth conditional correlation with its standard error (zero for
/// closed forms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleValue {
    pub value: f64,
    pub se: f64,
    pub event_mass: f64,
}

pub const ORACLE_DRAWS: usize = 10_000_000;
const MIN_ORACLE_MASS: f64 = 1e-4;

/// Truth for the event: closed form for Gaussian events on `z`, otherwise
/// `ORACLE_DRAWS` Monte Carlo rows.
pub fn oracle_ecc(spec: &GenSpec, event: &EventSpec) -> Result<OracleValue> {
    if spec.family == Family::GaussianScale {
        let bounds = population_bounds(spec.family, spec.theta.eta, event)?;
        if bounds.iter().all(|b| b.0 == 2) {
            return gaussian_closed_form(spec, &bounds);
        }
    }
    Ok(oracle_curve_monte_carlo(spec, std::slice::from_ref(event), ORACLE_DRAWS)?[0])
}

fn gaussian_closed_form(spec: &GenSpec, bounds: &[(usize, f64, f64)]) -> Result<OracleValue> {
    let t = &spec.theta;
    let sd = t.eta.sqrt();
    let lo = bounds.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max) / sd;
    let hi = bounds.iter().map(|b| b.2).fold(f64::INFINITY, f64::min) / sd;
    let tm = stats::truncated_standard_normal(lo, hi);
    if !(tm.mass >= MIN_ORACLE_MASS) {
        return Err(EccError::OracleUnstable {
            mass: tm.mass.max(0.0),
            min: MIN_ORACLE_MASS,
        });
    }
    let p = CorrelationParams::new(t.rho_xy, t.rho_xz, t.rho_yz, tm.variance - 1.0)?;
    Ok(OracleValue {
        value: ecc_population(&p)?,
        se: 0.0,
        event_mass: tm.mass,
    })
}

#[derive(Clone, Copy, Default)]
struct CorrAcc {
    n: f64,
    mx: f64,
    my: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl CorrAcc {
    #[inline]
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        let dx = x - self.mx;
        let dy = y - self.my;
        self.mx += dx / self.n;
        self.my += dy / self.n;
        self.sxx += dx * (x - self.mx);
        self.syy += dy * (y - self.my);
        self.sxy += dx * (y - self.my);
    }

    fn merge(&mut self, o: &CorrAcc) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let dx = o.mx - self.mx;
        let dy = o.my - self.my;
        self.sxx += o.sxx + dx * dx * self.n * o.n / n;
        self.syy += o.syy + dy * dy * self.n * o.n / n;
        self.sxy += o.sxy + dx * dy * self.n * o.n / n;
        self.mx += dx * o.n / n;
        self.my += dy * o.n / n;
        self.n = n;
    }

    fn corr(&self) -> f64 {
        self.sxy / (self.sxx * self.syy).sqrt()
    }
}

/// Monte Carlo truth for several events from one stream of `draws` rows;
/// standard errors come from the spread of 20 batch estimates.
pub fn oracle_curve_monte_carlo(spec: &GenSpec, events: &[EventSpec], draws: usize) -> Result<Vec<OracleValue>> {
    const BATCHES: usize = 20;
    let src = RowSource::new(spec)?;
    let bounds = events
        .iter()
        .map(|e| population_bounds(spec.family, spec.theta.eta, e))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0x0AC1E]));
    let per_batch = draws.div_ceil(BATCHES);
    let mut acc = vec![[CorrAcc::default(); BATCHES]; events.len()];
    for b in 0..BATCHES {
        for _ in 0..per_batch {
            let r = rng_row(&src, &mut rng);
            for (e, bnd) in bounds.iter().enumerate() {
                if bnd.iter().all(|&(c, lo, hi)| r[c] >= lo && r[c] < hi) {
                    acc[e][b].push(r[0], r[1]);
                }
            }
        }
    }
    let total = (per_batch * BATCHES) as f64;
    acc.iter()
        .map(|batches| {
            let mut pooled = CorrAcc::default();
            for b in batches {
                pooled.merge(b);
            }
            let mass = pooled.n / total;
            if !(mass >= MIN_ORACLE_MASS) {
                return Err(EccError::OracleUnstable {
                    mass,
                    min: MIN_ORACLE_MASS,
                });
            }
            let vals: Vec<f64> = batches.iter().map(CorrAcc::corr).collect();
            let se = stats::variance(&vals).sqrt() / (BATCHES as f64).sqrt();
            Ok(OracleValue {
                value: pooled.corr(),
                se,
                event_mass: mass,
            })
        })
        .collect()
}

#[inline]
fn rng_row(src: &RowSource, rng: &mut ChaCha8Rng) -> [f64; 3] {
    src.draw(rng)
}

/// Truth for a list of events: closed forms where available, otherwise a
/// single shared Monte Carlo stream.
pub fn oracle_curve(spec: &GenSpec, events: &[EventSpec]) -> Result<Vec<OracleValue>> {
    if spec.family == Family::GaussianScale {
        let closed: Option<Vec<_>> = events
            .iter()
            .map(|e| {
                population_bounds(spec.family, spec.theta.eta, e)
                    .ok()
                    .filter(|b| b.iter().all(|b| b.0 == 2))
            })
            .collect();
        if let Some(all) = closed {
            return all.iter().map(|b| gaussian_closed_form(spec, b)).collect();
        }
    }
    oracle_curve_monte_carlo(spec, events, ORACLE_DRAWS)
}
