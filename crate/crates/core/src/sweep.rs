//! λ sweeps over linear equilibria and quantizer designs, and their CSV /
//! JSON output.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{make_theta_grid, GridScheme, SourceSpec, ThetaGrid, DEFAULT_THETA_NODES};
use crate::json;
use crate::linear::LinearEquilibrium;
use crate::metrics::max_kl;
use crate::optimizer::{multistart, OptimOptions};
use crate::oracle::{monte_carlo_distortions, monte_carlo_linear, MonteCarloReport};

/// Exact CSV header; Monte Carlo columns follow when present.
pub const CSV_HEADER: &str = "lambda,M,d_e,fidelity,d_d,d_theta,d_kl_max,alpha,iterations,converged,restart_winner,seed";
const MC_HEADER: &str = "mc_d_e,mc_se_d_e,mc_fidelity,mc_se_fidelity,mc_d_d,mc_se_d_d,mc_d_theta,mc_se_d_theta";

/// Stand-in for λ → ∞.
pub const DEFAULT_LAMBDA_MAX: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Only the rate-unconstrained linear equilibrium (`M = 0`).
    Linear,
    /// Only quantizer designs; `M = 0` entries are skipped.
    Quantizer,
    /// Every entry of `m_values`, with `0` meaning linear.
    #[default]
    Sweep,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Mode::Linear),
            "quantizer" => Ok(Mode::Quantizer),
            "sweep" => Ok(Mode::Sweep),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected `linear`, `quantizer` or `sweep`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format `{other}` (expected `csv` or `json`)"))),
        }
    }
}

/// Log-spaced λ values from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRange {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    /// Explicit values; `"inf"` is allowed and capped at `lambda_max`.
    List(#[serde(with = "json::ext_f64_vec")] Vec<f64>),
    LogRange(LogRange),
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::List(vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1e3, f64::INFINITY])
    }
}

impl LambdaSpec {
    /// Concrete λ values, each capped at `lambda_max`.
    pub fn resolve(&self, lambda_max: f64) -> Result<Vec<f64>> {
        let values = match self {
            LambdaSpec::List(v) => v.clone(),
            LambdaSpec::LogRange(LogRange { start, stop, points }) => {
                if !(start.is_finite() && stop.is_finite() && *start > 0.0 && stop >= start) {
                    return Err(Error::Config(format!(
                        "lambdas range needs 0 < start <= stop, got start {start}, stop {stop}"
                    )));
                }
                match *points {
                    0 => Vec::new(),
                    1 => vec![*start],
                    n => {
                        let ratio = (stop / start).ln();
                        (0..n)
                            .map(|i| match i {
                                0 => *start,
                                i if i == n - 1 => *stop,
                                i => start * (ratio * i as f64 / (n - 1) as f64).exp(),
                            })
                            .collect()
                    }
                }
            }
        };
        if values.is_empty() {
            return Err(Error::Config("lambdas must not be empty".into()));
        }
        values
            .into_iter()
            .map(|l| {
                if l.is_nan() || l < 0.0 {
                    Err(Error::Config(format!("lambdas must be nonnegative, got {l}")))
                } else {
                    Ok(l.min(lambda_max))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nodes: usize,
    pub scheme: GridScheme,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nodes: DEFAULT_THETA_NODES,
            scheme: GridScheme::GaussHermite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub mode: Mode,
    pub lambdas: LambdaSpec,
    pub lambda_max: f64,
    pub m_values: Vec<usize>,
    pub sigma_x: f64,
    pub r: f64,
    pub rho: f64,
    pub theta_grid: GridSpec,
    /// The optimizer seed is taken from `seed`, not from here.
    pub optimizer: OptimOptions,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub verify: bool,
    pub verify_samples: usize,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            mode: Mode::Sweep,
            lambdas: LambdaSpec::default(),
            lambda_max: DEFAULT_LAMBDA_MAX,
            m_values: vec![0, 2, 8],
            sigma_x: 1.0,
            r: 1.0,
            rho: 0.0,
            theta_grid: GridSpec::default(),
            optimizer: OptimOptions::default(),
            seed: 0,
            out: None,
            format: OutputFormat::Csv,
            verify: false,
            verify_samples: 100_000,
            workers: None,
        }
    }
}

impl SweepConfig {
    /// Parses a JSON config; errors carry the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SweepConfig::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn source(&self) -> Result<SourceSpec> {
        SourceSpec::new(self.sigma_x, self.r, self.rho).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self, source: &SourceSpec) -> Result<ThetaGrid> {
        if self.theta_grid.nodes == 0 {
            return Err(Error::Config("theta_grid.nodes must be positive".into()));
        }
        make_theta_grid(source, self.theta_grid.nodes, self.theta_grid.scheme)
    }

    pub fn optim_options(&self) -> OptimOptions {
        OptimOptions {
            seed: self.seed,
            ..self.optimizer
        }
    }

    /// The (λ, M) jobs in output order.
    pub fn jobs(&self) -> Result<Vec<(f64, usize)>> {
        if !(self.lambda_max > 0.0) {
            return Err(Error::Config(format!("lambda_max must be positive, got {}", self.lambda_max)));
        }
        let mut lambdas = self.lambdas.resolve(self.lambda_max)?;
        lambdas.sort_by(f64::total_cmp);
        let mut ms: Vec<usize> = match self.mode {
            Mode::Linear => vec![0],
            Mode::Quantizer => self.m_values.iter().copied().filter(|&m| m > 0).collect(),
            Mode::Sweep => self.m_values.clone(),
        };
        ms.sort_unstable();
        if ms.is_empty() {
            return Err(Error::Config("m_values must contain at least one quantizer size".into()));
        }
        Ok(lambdas
            .iter()
            .flat_map(|&l| ms.iter().map(move |&m| (l, m)))
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.source()?;
        self.jobs()?;
        if self.theta_grid.nodes == 0 {
            return Err(Error::Config("theta_grid.nodes must be positive".into()));
        }
        if self.verify && self.verify_samples < 2 {
            return Err(Error::Config("verify_samples must be at least 2".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// One (λ, M) outcome. `M = 0` rows describe the linear equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(with = "json::ext_f64")]
    pub lambda: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(with = "json::opt_ext_f64")]
    pub d_e: Option<f64>,
    #[serde(with = "json::opt_ext_f64")]
    pub fidelity: Option<f64>,
    #[serde(with = "json::opt_ext_f64")]
    pub d_d: Option<f64>,
    #[serde(with = "json::opt_ext_f64")]
    pub d_theta: Option<f64>,
    #[serde(with = "json::opt_ext_f64")]
    pub d_kl_max: Option<f64>,
    #[serde(with = "json::opt_ext_f64")]
    pub alpha: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub restart_winner: Option<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloColumns>,
    /// Why the row failed, if it did. JSON only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloColumns {
    #[serde(with = "json::ext_f64")]
    pub mc_d_e: f64,
    #[serde(with = "json::ext_f64")]
    pub mc_se_d_e: f64,
    #[serde(with = "json::ext_f64")]
    pub mc_fidelity: f64,
    #[serde(with = "json::ext_f64")]
    pub mc_se_fidelity: f64,
    #[serde(with = "json::ext_f64")]
    pub mc_d_d: f64,
    #[serde(with = "json::ext_f64")]
    pub mc_se_d_d: f64,
    #[serde(with = "json::ext_f64")]
    pub mc_d_theta: f64,
    #[serde(with = "json::ext_f64")]
    pub mc_se_d_theta: f64,
}

impl From<MonteCarloReport> for MonteCarloColumns {
    fn from(r: MonteCarloReport) -> Self {
        MonteCarloColumns {
            mc_d_e: r.estimate.d_e,
            mc_se_d_e: r.se_d_e,
            mc_fidelity: r.estimate.fidelity,
            mc_se_fidelity: r.se_fidelity,
            mc_d_d: r.estimate.d_d,
            mc_se_d_d: r.se_d_d,
            mc_d_theta: r.estimate.d_theta,
            mc_se_d_theta: r.se_d_theta,
        }
    }
}

impl SweepRow {
    fn empty(lambda: f64, m: usize, seed: u64) -> Self {
        SweepRow {
            lambda,
            m,
            d_e: None,
            fidelity: None,
            d_d: None,
            d_theta: None,
            d_kl_max: None,
            alpha: None,
            iterations: None,
            converged: None,
            restart_winner: None,
            seed,
            monte_carlo: None,
            error: None,
        }
    }

    fn failed(lambda: f64, m: usize, seed: u64, err: &Error) -> Self {
        SweepRow {
            converged: Some(false),
            error: Some(err.to_string()),
            ..SweepRow::empty(lambda, m, seed)
        }
    }
}

fn linear_row(cfg: &SweepConfig, source: &SourceSpec, lambda: f64) -> Result<SweepRow> {
    let eq = LinearEquilibrium::solve(source, lambda)?;
    let rep = eq.report(source)?;
    let monte_carlo = if cfg.verify {
        Some(monte_carlo_linear(&eq, source, cfg.verify_samples, cfg.seed)?.into())
    } else {
        None
    };
    Ok(SweepRow {
        d_e: Some(rep.d_e),
        fidelity: Some(rep.fidelity),
        d_d: Some(rep.d_d),
        d_theta: Some(rep.d_theta),
        alpha: Some(eq.alpha),
        monte_carlo,
        ..SweepRow::empty(lambda, 0, cfg.seed)
    })
}

fn quantizer_row(cfg: &SweepConfig, source: &SourceSpec, grid: &ThetaGrid, lambda: f64, m: usize) -> Result<SweepRow> {
    let res = multistart(source, grid, m, lambda, &cfg.optim_options())?;
    let monte_carlo = if cfg.verify {
        let mc = monte_carlo_distortions(
            &res.quantizer,
            &res.responses,
            source,
            grid,
            lambda,
            cfg.verify_samples,
            cfg.seed,
        )?;
        Some(mc.into())
    } else {
        None
    };
    Ok(SweepRow {
        d_e: Some(res.report.d_e),
        fidelity: Some(res.report.fidelity),
        d_d: Some(res.report.d_d),
        d_theta: Some(res.report.d_theta),
        d_kl_max: Some(max_kl(&res.quantizer, source, grid).d_max),
        iterations: Some(res.iterations),
        converged: Some(res.converged),
        restart_winner: Some(res.restart),
        monte_carlo,
        ..SweepRow::empty(lambda, m, cfg.seed)
    })
}

/// Evaluates every (λ, M) job on a bounded worker pool. Rows come back
/// ordered by (λ, M); a failing row is kept with `converged = false`.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let source = cfg.source()?;
    let grid = cfg.grid(&source)?;
    let jobs = cfg.jobs()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|&(lambda, m)| {
                let row = if m == 0 {
                    linear_row(cfg, &source, lambda)
                } else {
                    quantizer_row(cfg, &source, &grid, lambda, m)
                };
                row.unwrap_or_else(|e| SweepRow::failed(lambda, m, cfg.seed, &e))
            })
            .collect()
    });
    Ok(rows)
}

/// `%.12g`-style rendering: 12 significant digits, trailing zeros trimmed,
/// `inf` / `-inf` / `nan` for non-finite values.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..12).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        trim_zeros(&format!("{x:.*}", (11 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// Rows as CSV text. Monte Carlo columns are added when any row has them.
pub fn to_csv(rows: &[SweepRow]) -> String {
    let with_mc = rows.iter().any(|r| r.monte_carlo.is_some());
    let mut out = String::from(CSV_HEADER);
    if with_mc {
        out.push(',');
        out.push_str(MC_HEADER);
    }
    out.push('\n');
    for r in rows {
        let fields = [
            format_float(r.lambda),
            r.m.to_string(),
            opt_float(r.d_e),
            opt_float(r.fidelity),
            opt_float(r.d_d),
            opt_float(r.d_theta),
            opt_float(r.d_kl_max),
            opt_float(r.alpha),
            opt(r.iterations),
            opt(r.converged),
            opt(r.restart_winner),
            r.seed.to_string(),
        ];
        out.push_str(&fields.join(","));
        if with_mc {
            match &r.monte_carlo {
                Some(mc) => {
                    for v in [
                        mc.mc_d_e,
                        mc.mc_se_d_e,
                        mc.mc_fidelity,
                        mc.mc_se_fidelity,
                        mc.mc_d_d,
                        mc.mc_se_d_d,
                        mc.mc_d_theta,
                        mc.mc_se_d_theta,
                    ] {
                        let _ = write!(out, ",{}", format_float(v));
                    }
                }
                None => out.push_str(&",".repeat(8)),
            }
        }
        out.push('\n');
    }
    out
}

pub fn to_json(rows: &[SweepRow]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(rows)?;
    s.push('\n');
    Ok(s)
}

pub fn render(rows: &[SweepRow], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => Ok(to_csv(rows)),
        OutputFormat::Json => to_json(rows),
    }
}

/// Writes the rows to `path`.
pub fn emit(rows: &[SweepRow], format: OutputFormat, path: &Path) -> Result<()> {
    let text = render(rows, format)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads rows written by [`emit`] in JSON format.
pub fn load_json_rows(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
