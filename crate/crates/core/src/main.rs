use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use strategiq::linear::LinearEquilibrium;
use strategiq::metrics::max_kl;
use strategiq::optimizer::multistart;
use strategiq::sweep::{emit, render, run_sweep, LambdaSpec, Mode, OutputFormat, SweepConfig};
use strategiq::{make_theta_grid, DistortionReport, Error, GradientMode, GridScheme, OptimOptions, Result, SourceSpec};

#[derive(Parser)]
#[command(name = "strategiq", version, about = "Privacy-constrained strategic quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a λ sweep and write one row per (λ, M).
    Sweep(SweepArgs),
    /// Solve the linear equilibrium at one λ and print it as JSON.
    Linear(LinearArgs),
    /// Design one quantizer and write it as JSON.
    Design(DesignArgs),
}

#[derive(Args)]
struct SourceArgs {
    #[arg(long)]
    sigma_x: Option<f64>,
    /// σ_θ / σ_X.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Args)]
struct OptimArgs {
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    n_restarts: Option<usize>,
    #[arg(long)]
    gradient_mode: Option<GradientMode>,
}

impl OptimArgs {
    fn apply(&self, o: &mut OptimOptions) {
        if let Some(v) = self.eta {
            o.eta = v;
        }
        if let Some(v) = self.eps {
            o.eps = v;
        }
        if let Some(v) = self.max_iters {
            o.max_iters = v;
        }
        if let Some(v) = self.n_restarts {
            o.n_restarts = v;
        }
        if let Some(v) = self.gradient_mode {
            o.gradient_mode = v;
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Comma-separated λ values; `inf` means `--lambda-max`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Comma-separated alphabet sizes; 0 is the linear equilibrium.
    #[arg(long = "m", alias = "m-values", value_delimiter = ',', num_args = 1..)]
    m_values: Option<Vec<usize>>,
    #[command(flatten)]
    source: SourceArgs,
    /// Number of θ grid nodes.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    scheme: Option<GridScheme>,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
    /// Add Monte Carlo columns to every row.
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    verify_samples: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct LinearArgs {
    #[arg(long)]
    lambda: f64,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    lambda: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = strategiq::gaussian::DEFAULT_THETA_NODES)]
    nodes: usize,
    #[arg(long, default_value_t = GridScheme::GaussHermite)]
    scheme: GridScheme,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn source_of(args: &SourceArgs) -> Result<SourceSpec> {
    SourceSpec::new(args.sigma_x.unwrap_or(1.0), args.r.unwrap_or(1.0), args.rho.unwrap_or(0.0))
        .map_err(|e| Error::Config(e.to_string()))
}

fn write_output(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => SweepConfig::load(path)?,
        None => SweepConfig::default(),
    };
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = args.lambdas {
        cfg.lambdas = LambdaSpec::List(v);
    }
    if let Some(v) = args.lambda_max {
        cfg.lambda_max = v;
    }
    if let Some(v) = args.m_values {
        cfg.m_values = v;
    }
    if let Some(v) = args.source.sigma_x {
        cfg.sigma_x = v;
    }
    if let Some(v) = args.source.r {
        cfg.r = v;
    }
    if let Some(v) = args.source.rho {
        cfg.rho = v;
    }
    if let Some(v) = args.nodes {
        cfg.theta_grid.nodes = v;
    }
    if let Some(v) = args.scheme {
        cfg.theta_grid.scheme = v;
    }
    args.optim.apply(&mut cfg.optimizer);
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if let Some(v) = args.format {
        cfg.format = v;
    }
    cfg.verify |= args.verify;
    if let Some(v) = args.verify_samples {
        cfg.verify_samples = v;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }

    let rows = run_sweep(&cfg)?;
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("warning: lambda={} M={}: {}", r.lambda, r.m, r.error.as_deref().unwrap_or(""));
    }
    match &cfg.out {
        Some(path) => emit(&rows, cfg.format, path),
        None => write_output(&render(&rows, cfg.format)?, None),
    }
}

#[derive(Serialize)]
struct LinearOutput {
    alpha: f64,
    kappa: f64,
    nu: f64,
    lambda: f64,
    #[serde(flatten)]
    report: DistortionReport,
}

fn linear(args: LinearArgs) -> Result<()> {
    let source = source_of(&args.source)?;
    if args.lambda.is_nan() || args.lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be nonnegative, got {}", args.lambda)));
    }
    let eq = LinearEquilibrium::solve(&source, args.lambda)?;
    let out = LinearOutput {
        alpha: eq.alpha,
        kappa: eq.kappa,
        nu: eq.nu,
        lambda: eq.lambda,
        report: eq.report(&source)?,
    };
    write_output(&(serde_json::to_string_pretty(&out)? + "\n"), None)
}

fn design(args: DesignArgs) -> Result<()> {
    let source = source_of(&args.source)?;
    if args.m == 0 {
        return Err(Error::Config("--m must be at least 1".into()));
    }
    if args.lambda.is_nan() || args.lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be nonnegative, got {}", args.lambda)));
    }
    let grid = make_theta_grid(&source, args.nodes, args.scheme).map_err(|e| Error::Config(e.to_string()))?;
    let mut opts = OptimOptions {
        seed: args.seed,
        ..OptimOptions::default()
    };
    args.optim.apply(&mut opts);
    opts.validate()?;
    let res = multistart(&source, &grid, args.m, args.lambda, &opts)?;
    eprintln!(
        "d_e={} d_d={} d_theta={} d_kl_max={} iterations={} converged={} restart={}",
        res.report.d_e,
        res.report.d_d,
        res.report.d_theta,
        max_kl(&res.quantizer, &source, &grid).d_max,
        res.iterations,
        res.converged,
        res.restart
    );
    let text = serde_json::to_string_pretty(&res.to_file(&grid))? + "\n";
    write_output(&text, args.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Linear(a) => linear(a),
        Command::Design(a) => design(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
