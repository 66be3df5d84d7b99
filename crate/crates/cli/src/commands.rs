use crate::io::{self, fmt_g, fmt_opt, Table};
use crate::Usage;
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ecc::deptest::run_tests;
use ecc::estimators::{
    assumption_diagnostics, covariance_shift_with_tol, ecc_estimate_with, ecc_subsample, implied_unconditional_detailed,
    transport_params, inverse_shift, CorrelationParams, MomentSource, MomentStrategy,
};
use ecc::events::{decile_sweep, event_mask, EventSpec};
use ecc::inference::{bootstrap_ci, ecc_estimate_delta};
use ecc::mc::{loglog_slope, run_study, ImpliedMoments, StudySpec, Task};
use ecc::network::{
    bootstrap_centrality, build_network, eigenvector_centrality, generate_factor_panel, split_regimes,
    CentralityNorm, FactorPanelSpec, Network, NetworkKind, Panel,
};
use ecc::regression::{fit_piecewise, uniform_grid, Binning, PiecewiseOptions};
use ecc::synth::{generate, Family, GenSpec, Theta};
use ecc::{EccEstimate, Sample};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Parser, Debug)]
#[command(name = "ecc", version, about = "Event conditional correlation toolkit")]
pub struct Cli {
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Conditional correlation of X and Y given an event, from the full sample.
    Estimate(EstimateArgs),
    /// Unconditional correlation implied by an event-restricted sample.
    Implied(ImpliedArgs),
    /// Move correlations measured under one event to another.
    Transport(TransportArgs),
    /// Conditional correlation over quantile bands of a covariate.
    Curve(CurveArgs),
    /// Draw a synthetic sample (or a synthetic factor panel).
    Synth(SynthArgs),
    /// Monte Carlo RMSE study of the proposed and subsample estimators.
    Mc(McArgs),
    /// Piecewise-affine regression of y on x.
    Regress(RegressArgs),
    /// Dependence tests with permutation p-values.
    Deptest(DeptestArgs),
    /// Regime-split partial-correlation networks and centrality.
    Network(NetworkArgs),
    /// Sample checks of the estimator's identifying assumptions.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Input CSV with a header row (`-` for stdin).
    #[arg(short, long, default_value = "-")]
    input: String,
    #[arg(long, default_value = "x")]
    x: String,
    #[arg(long, default_value = "y")]
    y: String,
    /// Covariate columns for X (comma-separated).
    #[arg(long, default_value = "z", value_delimiter = ',')]
    z: Vec<String>,
    /// Covariate columns for Y (default: same as --z).
    #[arg(long, value_delimiter = ',')]
    z2: Option<Vec<String>>,
}

impl SampleArgs {
    fn load(&self) -> Result<Sample> {
        let table = Table::read(&self.input)?;
        let z2 = self.z2.clone().unwrap_or_else(|| self.z.clone());
        let mut required: Vec<&str> = vec![&self.x, &self.y];
        for c in self.z.iter().chain(&z2) {
            if !required.contains(&c.as_str()) {
                required.push(c);
            }
        }
        let mut cols = Vec::new();
        for name in &required {
            cols.push((name.to_string(), table.numeric(name)?));
        }
        // other numeric columns can still serve as event targets
        for (i, h) in table.headers.iter().enumerate() {
            if !required.contains(&h.as_str()) {
                if let Ok(v) = table.numeric_at(i) {
                    cols.push((h.clone(), v));
                }
            }
        }
        let z1: Vec<&str> = self.z.iter().map(String::as_str).collect();
        let z2: Vec<&str> = z2.iter().map(String::as_str).collect();
        Ok(Sample::from_named(cols, &self.x, &self.y, &z1, &z2)?)
    }
}

fn parse_event(s: &str) -> Result<EventSpec> {
    s.parse::<EventSpec>().map_err(|e| anyhow!(Usage(format!("--event '{s}': {e}"))))
}

fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| anyhow!(Usage(format!("{what} is stochastic: pass --seed or set ECC_SEED"))))
}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(anyhow!(Usage(msg.into())))
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstMethod {
    Corrected,
    Subsample,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Moments {
    Empirical,
    Gaussian,
}

impl From<Moments> for MomentStrategy {
    fn from(m: Moments) -> Self {
        match m {
            Moments::Empirical => MomentStrategy::Empirical,
            Moments::Gaussian => MomentStrategy::GaussianModel,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeKind {
    None,
    Delta,
    Bootstrap,
}

#[derive(Args, Debug)]
pub struct InferenceArgs {
    #[arg(long, value_enum, default_value = "corrected")]
    method: EstMethod,
    /// Conditional covariate moments for the corrected estimator.
    #[arg(long, value_enum, default_value = "empirical")]
    moments: Moments,
    /// Bootstrap replicates when --se bootstrap.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, env = "ECC_SEED")]
    seed: Option<u64>,
}

impl InferenceArgs {
    fn point(&self, sample: &Sample, event: &EventSpec) -> ecc::Result<EccEstimate> {
        match self.method {
            EstMethod::Corrected => ecc_estimate_with(sample, event, self.moments.into()),
            EstMethod::Subsample => ecc_subsample(sample, event),
        }
    }

    fn check(&self, se: SeKind) -> Result<()> {
        if se == SeKind::Delta && (self.method != EstMethod::Corrected || self.moments != Moments::Empirical) {
            return usage("delta-method errors need --method corrected --moments empirical; use --se bootstrap");
        }
        if se == SeKind::Bootstrap {
            require_seed(self.seed, "the bootstrap")?;
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return usage(format!("--level {} must lie in (0, 1)", self.level));
        }
        Ok(())
    }

    fn with_se(&self, sample: &Sample, event: &EventSpec, se: SeKind) -> Result<EccEstimate> {
        Ok(match se {
            SeKind::None => self.point(sample, event)?,
            SeKind::Delta => ecc_estimate_delta(sample, event, self.level)?,
            SeKind::Bootstrap => {
                let mut est = self.point(sample, event)?;
                let seed = require_seed(self.seed, "the bootstrap")?;
                let ci = bootstrap_ci(sample, event, |s, e| self.point(s, e), self.bootstrap, self.level, seed)?;
                est.ci = Some((ci.lo, ci.hi));
                est
            }
        })
    }
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    sample: SampleArgs,
    /// Event, e.g. `all`, `gt:z:1.5`, `band:z:0.4:0.1`, `rect:z1:-1:1,z2:0:2`.
    #[arg(long, default_value = "all")]
    event: String,
    #[command(flatten)]
    inference: InferenceArgs,
    #[arg(long, value_enum, default_value = "none")]
    se: SeKind,
    #[arg(short, long)]
    output: Option<String>,
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let event = parse_event(&a.event)?;
    a.inference.check(a.se)?;
    let sample = a.sample.load()?;
    let est = a.inference.with_se(&sample, &event, a.se)?;
    let mut w = io::csv_writer(a.output.as_deref())?;
    w.write_record(["event", "method", "estimate", "se", "lo", "hi", "n_total", "n_event", "clamped"])?;
    w.write_record([
        event.to_string(),
        method_name(a.inference.method).into(),
        fmt_g(est.rho),
        fmt_opt(est.se),
        fmt_opt(est.ci.map(|c| c.0)),
        fmt_opt(est.ci.map(|c| c.1)),
        est.n_total.to_string(),
        est.n_event.to_string(),
        est.clamped.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

fn method_name(m: EstMethod) -> &'static str {
    match m {
        EstMethod::Corrected => "corrected",
        EstMethod::Subsample => "subsample",
    }
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["sigma_z", "mle_event"]))]
pub struct ImpliedArgs {
    #[command(flatten)]
    sample: SampleArgs,
    /// Restrict the input to this event first (the input is then a full sample).
    #[arg(long)]
    event: Option<String>,
    /// Unconditional standard deviation of each distinct covariate.
    #[arg(long, value_delimiter = ',')]
    sigma_z: Option<Vec<f64>>,
    /// Fit the unconditional covariate moments by truncated-Gaussian
    /// likelihood on this event (numeric bounds on one covariate).
    #[arg(long)]
    mle_event: Option<String>,
    #[arg(short, long)]
    output: Option<String>,
}

fn restrict(sample: Sample, event: Option<&str>) -> Result<Sample> {
    match event {
        None => Ok(sample),
        Some(e) => {
            let event = parse_event(e)?;
            Ok(sample.restrict(&event_mask(&sample, &event)?)?)
        }
    }
}

fn distinct_covariates(sample: &Sample) -> usize {
    let r = sample.roles();
    let mut seen: Vec<usize> = Vec::new();
    for &c in r.z1.iter().chain(&r.z2) {
        if !seen.contains(&c) {
            seen.push(c);
        }
    }
    seen.len()
}

fn moment_source(sample: &Sample, sigma_z: Option<&[f64]>, mle_event: Option<&str>) -> Result<Option<MomentSource>> {
    if let Some(sd) = sigma_z {
        let k = distinct_covariates(sample);
        if sd.len() != k {
            return usage(format!("--sigma-z has {} values for {k} distinct covariates", sd.len()));
        }
        if sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return usage("--sigma-z values must be positive");
        }
        let var = DVector::from_iterator(k, sd.iter().map(|s| s * s));
        return Ok(Some(MomentSource::Asserted(DMatrix::from_diagonal(&var))));
    }
    match mle_event {
        Some(e) => Ok(Some(MomentSource::TruncatedGaussian(parse_event(e)?))),
        None => Ok(None),
    }
}

fn implied(a: ImpliedArgs) -> Result<()> {
    let sample = restrict(a.sample.load()?, a.event.as_deref())?;
    let source = moment_source(&sample, a.sigma_z.as_deref(), a.mle_event.as_deref())?.expect("group is required");
    let fit = implied_unconditional_detailed(&sample, &source)?;
    let mut w = io::csv_writer(a.output.as_deref())?;
    w.write_record(["estimate", "rho_given_a", "n", "clamped"])?;
    w.write_record([
        fmt_g(fit.estimate.rho),
        fmt_g(fit.rho_xy_given_a),
        fit.estimate.n_event.to_string(),
        fit.estimate.clamped.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct TransportArgs {
    /// Correlations measured under the source event.
    #[arg(long)]
    rho_xy: f64,
    #[arg(long)]
    rho_xz: f64,
    #[arg(long)]
    rho_yz: f64,
    /// `var(Z|target) / var(Z|source) - 1`.
    #[arg(long)]
    delta_tilde: f64,
    /// Undo a transport made with the same --delta-tilde.
    #[arg(long)]
    inverse: bool,
    #[arg(short, long)]
    output: Option<String>,
}

fn transport_cmd(a: TransportArgs) -> Result<()> {
    if !(a.delta_tilde > -1.0) || !a.delta_tilde.is_finite() {
        return usage(format!("--delta-tilde {} must exceed -1", a.delta_tilde));
    }
    let params = CorrelationParams::new(a.rho_xy, a.rho_xz, a.rho_yz, 0.0).map_err(|e| anyhow!(Usage(e.to_string())))?;
    let d = if a.inverse { inverse_shift(a.delta_tilde) } else { a.delta_tilde };
    let out = transport_params(&params, d)?;
    let mut w = io::csv_writer(a.output.as_deref())?;
    w.write_record(["rho_xy", "rho_xz", "rho_yz", "delta_tilde"])?;
    w.write_record([fmt_g(out.rho_xy), fmt_g(out.rho_xz), fmt_g(out.rho_yz), fmt_g(d)])?;
    w.flush()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    #[command(flatten)]
    sample: SampleArgs,
    /// Column whose quantile bands are swept (default: first --z column).
    #[arg(long)]
    column: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    width: f64,
    #[command(flatten)]
    inference: InferenceArgs,
    #[arg(long, value_enum, default_value = "delta")]
    se: SeKind,
    #[arg(short, long)]
    output: Option<String>,
}

fn curve(a: CurveArgs) -> Result<()> {
    let k = 1.0 / a.width;
    if !(a.width > 0.0 && a.width <= 1.0) || (k - k.round()).abs() > 1e-9 {
        return usage(format!("--width {} must divide 1", a.width));
    }
    a.inference.check(a.se)?;
    let column = a.column.clone().unwrap_or_else(|| a.sample.z[0].clone());
    let sample = a.sample.load()?;
    let mut w = io::csv_writer(a.output.as_deref())?;
    w.write_record(["band", "estimate", "se", "lo", "hi"])?;
    for (upper, event) in decile_sweep(&column, a.width) {
        let est = a.inference.with_se(&sample, &event, a.se).with_context(|| format!("band {event}"))?;
        w.write_record([
            fmt_g(upper),
            fmt_g(est.rho),
            fmt_opt(est.se),
            fmt_opt(est.ci.map(|c| c.0)),
            fmt_opt(est.ci.map(|c| c.1)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct SynthArgs {
    /// gaussian, student-t or chisq.
    #[arg(long, default_value = "gaussian")]
    family: String,
    #[arg(long, default_value_t = 0.6)]
    rho_xy: f64,
    #[arg(long, default_value_t = 0.7)]
    rho_xz: f64,
    #[arg(long, default_value_t = 0.8)]
    rho_yz: f64,
    /// Variance (Gaussian) or degrees of freedom (t, chi-square mixture).
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(short, long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, env = "ECC_SEED")]
    seed: Option<u64>,
    /// Emit a one-factor panel with this many residual columns instead.
    #[arg(long)]
    panel: Option<usize>,
    /// Loading of the hidden crisis factor on the first half of the panel.
    #[arg(long)]
    contagion: Option<f64>,
    /// Where the panel's covariate CSV goes (required with --panel).
    #[arg(long)]
    covariates: Option<String>,
    #[arg(short, long)]
    output: Option<String>,
}

fn family(s: &str) -> Result<Family> {
    s.parse().map_err(|e: ecc::EccError| anyhow!(Usage(e.to_string())))
}

fn synth(a: SynthArgs) -> Result<()> {
    let seed = require_seed(a.seed, "synth")?;
    if let Some(p) = a.panel {
        let Some(cov_path) = a.covariates.as_deref() else {
            return usage("--panel needs --covariates PATH");
        };
        let mut spec = FactorPanelSpec::standard(a.n, p, seed);
        if let Some(c) = a.contagion {
            spec.contagion = Some((0..p).map(|i| if i < p / 2 { c } else { 0.0 }).collect());
        }
        let panel = generate_factor_panel(&spec).map_err(|e| anyhow!(Usage(e.to_string())))?;
        write_panel_part(a.output.as_deref(), &panel.dates, &panel.names, &panel.residuals)?;
        write_panel_part(Some(cov_path), &panel.dates, &panel.covariate_names, &panel.covariates)?;
        return Ok(());
    }
    if a.contagion.is_some() || a.covariates.is_some() {
        return usage("--contagion and --covariates need --panel");
    }
    let theta = Theta {
        rho_xy: a.rho_xy,
        rho_xz: a.rho_xz,
        rho_yz: a.rho_yz,
        eta: a.eta,
    };
    let spec = GenSpec::new(family(&a.family)?, theta, a.n, seed);
    spec.validate().map_err(|e| anyhow!(Usage(e.to_string())))?;
    let s = generate(&spec)?;
    let mut w = io::csv_writer(a.output.as_deref())?;
    w.write_record(["x", "y", "z"])?;
    for i in 0..s.n() {
        w.write_record([fmt_g(s.column(0)[i]), fmt_g(s.column(1)[i]), fmt_g(s.column(2)[i])])?;
    }
    w.flush()?;
    Ok(())
}

fn write_panel_part(path: Option<&str>, dates: &[String], names: &[String], cols: &[Vec<f64>]) -> Result<()> {
    let mut w = io::csv_writer(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (r, d) in dates.iter().enumerate() {
        let mut rec = vec![d.clone()];
        rec.extend(cols.iter().map(|c| fmt_g(c[r])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum McTask {
    Curve,
    Implied,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum McMoments {
    Asserted,
    Mle,
}

#[derive(Args, Debug)]
pub struct McArgs {
    #[arg(long, default_value = "gaussian")]
    family: String,
    /// `rho_xy,rho_xz,rho_yz,eta`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0.2,0.4,0.6,1")]
    theta: Vec<f64>,
    /// Sample sizes (for the implied task: rows per band).
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, value_enum, default_value = "curve")]
    task: McTask,
    /// Unconditional covariate variance for the implied task.
    #[arg(long, value_enum, default_value = "asserted")]
    moments: McMoments,
    #[arg(long, default_value_t = 0.1)]
    band_width: f64,
    #[arg(long, env = "ECC_SEED")]
    seed: Option<u64>,
    #[arg(short, long)]
    output: Option<String>,
}

fn mc(a: McArgs) -> Result<()> {
    let seed = require_seed(a.seed, "mc")?;
    let fam = family(&a.family)?;
    if a.theta.len() != 4 {
        return usage(format!("--theta needs 4 values, got {}", a.theta.len()));
    }
    let theta = Theta {
        rho_xy: a.theta[0],
        rho_xz: a.theta[1],
        rho_yz: a.theta[2],
        eta: a.theta[3],
    };
    let task = match a.task {
        McTask::Curve => Task::EccCurve,
        McTask::Implied => Task::ImpliedUnconditional,
    };
    let mut spec = StudySpec::new(fam, theta, a.sizes.clone(), a.reps, task, seed);
    spec.band_width = a.band_width;
    spec.implied_moments = match a.moments {
        McMoments::Asserted => ImpliedMoments::Asserted,
        McMoments::Mle => ImpliedMoments::TruncatedMle,
    };
    spec.validate().map_err(|e| anyhow!(Usage(e.to_string())))?;
    let res = run_study(&spec)?;
    if a.sizes.len() > 1 {
        for m in &spec.methods {
            log::info!("{m}: log-log RMSE slope {}", fmt_g(loglog_slope(&res.rmse_curve(*m))));
        }
    }
    let theta_s = a.theta.iter().map(|v| fmt_g(*v)).collect::<Vec<_>>().join(",");
    let mut w = io::csv_writer(a.output.as_deref())?;
    w.write_record(["family", "theta", "method", "n", "rmse", "replications", "seed"])?;
    for c in &res.cells {
        w.write_record([
            fam.to_string(),
            theta_s.clone(),
            c.method.to_string(),
            c.n.to_string(),
            fmt_g(c.rmse),
            res.replications.to_string(),
            seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum BinningArg {
    Width,
    Count,
}

#[derive(Args, Debug)]
pub struct RegressArgs {
    #[arg(short, long, default_value = "-")]
    input: String,
    #[arg(long, default_value = "x")]
    x: String,
    #[arg(long, default_value = "y")]
    y: String,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, value_enum, default_value = "width")]
    binning: BinningArg,
    /// Bins with fewer rows are merged into a neighbour.
    #[arg(long, default_value_t = 10)]
    min_occupancy: usize,
    /// JSON fit destination.
    #[arg(short, long)]
    output: Option<String>,
    /// CSV of predictions on an evenly spaced grid over the observed x range.
    #[arg(long)]
    predictions: Option<String>,
    #[arg(long, default_value_t = 200)]
    grid: usize,
}

fn regress(a: RegressArgs) -> Result<()> {
    if a.grid < 2 {
        return usage("--grid needs at least 2 points");
    }
    let t = Table::read(&a.input)?;
    let x = t.numeric(&a.x)?;
    let y = t.numeric(&a.y)?;
    let opts = PiecewiseOptions {
        n_bins: a.bins,
        binning: match a.binning {
            BinningArg::Width => Binning::EqualWidth,
            BinningArg::Count => Binning::EqualCount,
        },
        min_occupancy: a.min_occupancy,
    };
    let fit = fit_piecewise(&x, &y, &opts)?;
    io::write_json(a.output.as_deref(), &fit)?;
    if let Some(p) = a.predictions.as_deref() {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w = io::csv_writer(Some(p))?;
        w.write_record(["x", "prediction", "extrapolated"])?;
        for g in uniform_grid(lo, hi, a.grid) {
            let pr = fit.predict(g);
            w.write_record([fmt_g(g), fmt_g(pr.value), pr.extrapolated.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct DeptestArgs {
    #[command(flatten)]
    sample: SampleArgs,
    /// Restrict the input to this event first.
    #[arg(long)]
    event: Option<String>,
    /// Unconditional standard deviation of each covariate (for the
    /// ecc-implied test).
    #[arg(long, value_delimiter = ',', conflicts_with = "mle_event")]
    sigma_z: Option<Vec<f64>>,
    #[arg(long)]
    mle_event: Option<String>,
    #[arg(long, default_value_t = 1000)]
    perms: usize,
    #[arg(long, env = "ECC_SEED")]
    seed: Option<u64>,
    #[arg(short, long)]
    output: Option<String>,
}

fn deptest(a: DeptestArgs) -> Result<()> {
    let seed = require_seed(a.seed, "deptest")?;
    if a.perms == 0 {
        return usage("--perms must be positive");
    }
    let sample = restrict(a.sample.load()?, a.event.as_deref())?;
    let source = moment_source(&sample, a.sigma_z.as_deref(), a.mle_event.as_deref())?;
    if source.is_none() {
        log::warn!("no --sigma-z or --mle-event: the ecc-implied test is skipped");
    }
    let results = run_tests(&sample, source.as_ref(), a.perms, seed)?;
    let mut w = io::csv_writer(a.output.as_deref())?;
    w.write_record(["test", "statistic", "p_value", "method", "error"])?;
    for (kind, r) in results {
        match r {
            Ok(t) => w.write_record([
                kind.name().to_string(),
                fmt_g(t.statistic),
                fmt_g(t.p_value),
                pmethod(t.method).into(),
                String::new(),
            ])?,
            Err(e) => w.write_record([kind.name().to_string(), String::new(), String::new(), String::new(), e.to_string()])?,
        }
    }
    w.flush()?;
    Ok(())
}

fn pmethod(m: ecc::deptest::PValueMethod) -> &'static str {
    match m {
        ecc::deptest::PValueMethod::Permutation => "permutation",
        ecc::deptest::PValueMethod::Asymptotic => "asymptotic",
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum NormArg {
    L2,
    L1,
}

#[derive(Args, Debug)]
pub struct NetworkArgs {
    /// Residuals CSV: date column, then one column per node.
    #[arg(long)]
    residuals: String,
    /// Covariates CSV: date column, then one column per covariate.
    #[arg(long)]
    covariates: String,
    /// Covariate that defines the crisis regime (default: the first).
    #[arg(long)]
    split_on: Option<String>,
    /// Rows at or above this quantile of the split covariate form the crisis.
    #[arg(long, default_value_t = 0.75)]
    quantile: f64,
    /// Counterfactual covariate covariance: stable + scale * (crisis - stable).
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    delta_scale: f64,
    /// Bootstrap replicates for centrality intervals (0 = none).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, env = "ECC_SEED")]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "l2")]
    norm: NormArg,
    /// Edge-list CSV destination (default stdout).
    #[arg(long)]
    edges: Option<String>,
    /// Centrality JSON destination.
    #[arg(long)]
    centrality: Option<String>,
}

fn read_panel_part(path: &str) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let t = Table::read(path)?;
    if t.headers.len() < 2 {
        bail!("'{path}' needs a date column and at least one data column");
    }
    let dates = t.strings(0);
    let names = t.headers[1..].to_vec();
    let cols = (1..t.headers.len())
        .map(|i| t.numeric_at(i))
        .collect::<Result<Vec<_>>>()
        .with_context(|| format!("reading '{path}'"))?;
    Ok((dates, names, cols))
}

#[derive(Serialize)]
struct NetworkSummary {
    mean: f64,
    sd: f64,
    eigenvalue: f64,
    scores: BTreeMap<String, f64>,
    ridge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootstrapSummary>,
}

#[derive(Serialize)]
struct BootstrapSummary {
    replicates: usize,
    level: f64,
    mean_ci: (f64, f64),
    sd_ci: (f64, f64),
}

#[derive(Serialize)]
struct NetworkReport {
    split_on: String,
    quantile: f64,
    threshold: f64,
    n_stable: usize,
    n_crisis: usize,
    delta_scale: f64,
    seed: Option<u64>,
    networks: BTreeMap<String, NetworkSummary>,
}

fn network(a: NetworkArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.quantile) {
        return usage(format!("--quantile {} outside [0, 1]", a.quantile));
    }
    if !(a.level > 0.0 && a.level < 1.0) {
        return usage(format!("--level {} must lie in (0, 1)", a.level));
    }
    let seed = if a.bootstrap > 0 { Some(require_seed(a.seed, "the centrality bootstrap")?) } else { a.seed };
    let (dates, names, residuals) = read_panel_part(&a.residuals)?;
    let (cdates, cnames, covariates) = read_panel_part(&a.covariates)?;
    if dates != cdates {
        let row = dates.iter().zip(&cdates).position(|(a, b)| a != b).unwrap_or(dates.len().min(cdates.len()));
        bail!("residual and covariate dates differ at data row {} (residuals {}, covariates {})", row + 1, dates.len(), cdates.len());
    }
    let split = a.split_on.clone().unwrap_or_else(|| cnames[0].clone());
    let col = cnames
        .iter()
        .position(|c| *c == split)
        .ok_or_else(|| anyhow!(Usage(format!("no covariate named '{split}'"))))?;
    let panel = Panel::new(dates, names, residuals, cnames, covariates)?;
    let regimes = split_regimes(&panel, col, a.quantile)?;
    let norm = match a.norm {
        NormArg::L2 => CentralityNorm::L2,
        NormArg::L1 => CentralityNorm::L1,
    };
    let kinds = [
        ("stable", NetworkKind::Stable),
        ("crisis", NetworkKind::Crisis),
        ("stable-corrected", NetworkKind::StableCorrected),
        ("crisis-corrected", NetworkKind::CrisisCorrected),
        ("counterfactual", NetworkKind::Counterfactual { scale: a.delta_scale }),
    ];
    let mut edges = io::csv_writer(a.edges.as_deref())?;
    edges.write_record(["i", "j", "weight", "regime"])?;
    let mut networks = BTreeMap::new();
    for (label, kind) in kinds {
        let net = build_network(&panel, &regimes, kind).with_context(|| format!("{label} network"))?;
        write_edges(&mut edges, &panel.names, &net, label)?;
        let c = eigenvector_centrality(&net, norm)?;
        let bootstrap = match seed {
            Some(s) if a.bootstrap > 0 => {
                let b = bootstrap_centrality(&panel, &regimes, kind, norm, a.bootstrap, a.level, s)?;
                Some(BootstrapSummary {
                    replicates: a.bootstrap,
                    level: a.level,
                    mean_ci: b.mean_ci,
                    sd_ci: b.sd_ci,
                })
            }
            _ => None,
        };
        networks.insert(
            label.to_string(),
            NetworkSummary {
                mean: c.mean,
                sd: c.sd,
                eigenvalue: c.eigenvalue,
                scores: panel.names.iter().cloned().zip(c.scores).collect(),
                ridge: net.ridge,
                bootstrap,
            },
        );
    }
    edges.flush()?;
    let report = NetworkReport {
        split_on: split,
        quantile: a.quantile,
        threshold: regimes.threshold,
        n_stable: regimes.stable.len(),
        n_crisis: regimes.crisis.len(),
        delta_scale: a.delta_scale,
        seed,
        networks,
    };
    match a.centrality.as_deref() {
        Some(p) => io::write_json(Some(p), &report),
        None => {
            if a.edges.is_some() {
                io::write_json(None, &report)
            } else {
                log::warn!("no --centrality path given; centrality summary not written");
                Ok(())
            }
        }
    }
}

fn write_edges<W: std::io::Write>(w: &mut csv::Writer<W>, names: &[String], net: &Network, label: &str) -> Result<()> {
    let p = names.len();
    for i in 0..p {
        for j in (i + 1)..p {
            w.write_record([names[i].as_str(), names[j].as_str(), &fmt_g(net.weights[(i, j)]), label])?;
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    sample: SampleArgs,
    #[arg(long, default_value = "all")]
    event: String,
    /// Singular values below this fraction of the largest do not count
    /// towards the effective rank of the shift.
    #[arg(long, default_value_t = 0.05)]
    rank_tol: f64,
    #[arg(short, long)]
    output: Option<String>,
}

#[derive(Serialize)]
struct Diagnosis {
    event: String,
    n_total: usize,
    n_event: usize,
    a1_gap: f64,
    a2_gap: f64,
    bias_bound_scale: f64,
    /// Spectrum of the joint covariance shift of (X, Y, covariates).
    shift_singular_values: Vec<f64>,
    shift_effective_rank: usize,
    covariate_dim: usize,
    within_rank_bound: bool,
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let event = parse_event(&a.event)?;
    let sample = a.sample.load()?;
    let d = assumption_diagnostics(&sample, &event)?;
    let mask = event_mask(&sample, &event)?;
    let rows: Vec<usize> = (0..sample.n()).filter(|&r| mask[r]).collect();
    let r = sample.roles();
    let mut idx = vec![r.x, r.y];
    for &c in r.z1.iter().chain(&r.z2) {
        if !idx.contains(&c) {
            idx.push(c);
        }
    }
    let cols: Vec<&[f64]> = idx.iter().map(|&c| sample.column(c)).collect();
    let sigma = ecc::stats::covariance_matrix(&cols, None);
    let sigma_a = ecc::stats::covariance_matrix(&cols, Some(&rows));
    if !(a.rank_tol > 0.0 && a.rank_tol < 1.0) {
        return usage("--rank-tol must lie in (0, 1)");
    }
    let shift = covariance_shift_with_tol(&sigma, &sigma_a, idx.len() - 2, a.rank_tol)?;
    io::write_json(
        a.output.as_deref(),
        &Diagnosis {
            event: event.to_string(),
            n_total: sample.n(),
            n_event: rows.len(),
            a1_gap: d.a1_gap,
            a2_gap: d.a2_gap,
            bias_bound_scale: d.bias_bound_scale,
            within_rank_bound: shift.within_rank_bound(),
            shift_singular_values: shift.singular_values,
            shift_effective_rank: shift.effective_rank,
            covariate_dim: shift.z_dim,
        },
    )
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Implied(a) => implied(a),
        Command::Transport(a) => transport_cmd(a),
        Command::Curve(a) => curve(a),
        Command::Synth(a) => synth(a),
        Command::Mc(a) => mc(a),
        Command::Regress(a) => regress(a),
        Command::Deptest(a) => deptest(a),
        Command::Network(a) => network(a),
        Command::Diagnose(a) => diagnose(a),
    }
}
