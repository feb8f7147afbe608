//! `kcgm` command-line interface.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 1 when a
//! computation fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kcgm::diagnostics::{sketch_dimension_schedule, spectral_sweep, ScheduleRegime};
use kcgm::harness::{generate_data, run_experiment, training_error, ExperimentConfig, Quadrature};
use kcgm::kernel::{gram, KernelSpec};
use kcgm::reduce::{nystrom_factors, sketched_factors};
use kcgm::sketch::{self, SketchKind, SketchParams};
use kcgm::solver::{fit, fit_krr, log_grid, Predictor, SolverConfig, Stopping};
use kcgm::{Error, Variant};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "kcgm", version, about = "Projected kernel conjugate-gradient regression benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one synthetic dataset with one method and print t̂ and both errors.
    Fit(FitArgs),
    /// Run an experiment described by a TOML file and write CSV results.
    Experiment(ExperimentArgs),
    /// Print effective dimension and projection error over a λ grid as CSV.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Classic,
    Sketched,
    Nystrom,
    Krr,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StopRule {
    /// Minimal prediction error over t ≤ t_max.
    Oracle,
    Threshold,
    Fixed,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sketch kind (gaussian, rademacher, ros, nystrom_plain, nystrom_als, identity).
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long, value_enum)]
    stopping: Option<StopRule>,
    /// Iteration for `--stopping fixed`.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    zeta: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 2048)]
    quadrature_points: usize,
    /// TOML file with optional `t_max`, `stopping` and `[sketch]` keys;
    /// command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_path` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    n: usize,
    /// `min:max:count`, log-spaced.
    #[arg(long, default_value = "1e-3:1:8")]
    lambda_grid: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sketch kind; defaults to ros.
    #[arg(long)]
    kind: Option<String>,
    /// Defaults to ⌈n^{1/3}⌉ for matrix sketches and ⌈n^{2/3}⌉ for subsampling.
    #[arg(long)]
    m: Option<usize>,
    /// TOML file with an optional `[sketch]` table.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitFile {
    t_max: Option<usize>,
    stopping: Option<Stopping>,
    sketch: Option<SketchParams>,
}

fn read_fit_file(path: &Path) -> kcgm::Result<FitFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_kind(s: &str) -> kcgm::Result<SketchKind> {
    s.parse()
}

fn parse_lambda_grid(s: &str) -> kcgm::Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("lambda grid `{s}` is not min:max:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo && count >= 1) {
        return Err(bad());
    }
    Ok(log_grid(lo, hi, count))
}

fn default_m(kind: SketchKind, n: usize) -> kcgm::Result<usize> {
    let regime = if kind.is_subsampling() {
        ScheduleRegime::ExperimentNystrom
    } else {
        ScheduleRegime::ExperimentSketched
    };
    sketch_dimension_schedule(n, 0.5, 0.5, regime)
}

fn run_fit(args: FitArgs) -> kcgm::Result<()> {
    let file = match &args.config {
        Some(p) => read_fit_file(p)?,
        None => FitFile::default(),
    };
    let data = generate_data(args.n, args.noise_sd, args.seed)?;
    let kernel = KernelSpec::sobolev();
    let quadrature = Quadrature::new(args.quadrature_points)?;
    let oracle = |p: &Predictor| quadrature.prediction_error(p).unwrap_or(f64::INFINITY);

    if args.method == Method::Krr {
        let fitted = fit_krr(&data, &kernel, &log_grid(1e-6, 1.0, 12), &oracle)?;
        println!("method: krr");
        println!("n: {}", args.n);
        println!("lambda: {}", fitted.lambda);
        println!("prediction_error: {}", quadrature.prediction_error(&fitted.predictor)?);
        println!("training_error: {}", training_error(&fitted.predictor, &data)?);
        return Ok(());
    }

    let variant = match args.method {
        Method::Classic => Variant::Classic,
        Method::Sketched => Variant::Sketched,
        _ => Variant::Nystrom,
    };
    let default_kind = if variant == Variant::Nystrom {
        SketchKind::NystromPlain
    } else {
        SketchKind::Ros
    };
    let mut sketch = file.sketch.unwrap_or_else(|| SketchParams {
        m: None,
        ..SketchParams::new(default_kind, 0, args.seed)
    });
    if let Some(kind) = &args.kind {
        sketch.kind = parse_kind(kind)?;
    }
    if args.m.is_some() {
        sketch.m = args.m;
    }
    if sketch.m.is_none() {
        sketch.m = Some(default_m(sketch.kind, args.n)?);
    }
    let stopping = match args.stopping {
        Some(StopRule::Oracle) => Stopping::OracleMinError,
        Some(StopRule::Threshold) => Stopping::Threshold {
            zeta: args.zeta,
            gamma: args.gamma,
            tau: args.tau,
            delta: args.delta,
        },
        Some(StopRule::Fixed) => Stopping::FixedT {
            t: args.t.ok_or_else(|| Error::Config("--stopping fixed needs --t".into()))?,
        },
        None => file.stopping.unwrap_or(Stopping::OracleMinError),
    };
    let config = SolverConfig {
        variant,
        sketch: (variant != Variant::Classic).then_some(sketch),
        t_max: args.t_max.or(file.t_max),
        stopping,
    };
    let out = fit(&data, &kernel, &config, Some(&oracle))?;
    println!("method: {}", variant.name());
    if let Some(s) = &config.sketch {
        println!("sketch: {}", s.kind);
    }
    println!("n: {}", args.n);
    println!("m: {}", out.path.m);
    println!("t_max: {}", out.path.t_max());
    println!("t_hat: {}", out.decision.t_hat);
    if let Some(thr) = out.decision.threshold_value {
        println!("threshold: {thr}");
        println!("threshold_reached: {}", out.decision.reached);
    }
    println!("residual: {}", out.decision.residual_at_stop);
    println!("prediction_error: {}", quadrature.prediction_error(&out.predictor)?);
    println!("training_error: {}", training_error(&out.predictor, &data)?);
    Ok(())
}

fn run_experiment_cmd(args: ExperimentArgs) -> kcgm::Result<()> {
    let mut config = ExperimentConfig::from_path(&args.config).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("cannot read {path}: {source}")),
        e => e,
    })?;
    if let Some(out) = args.out {
        config.output_path = out;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let report = run_experiment(&config)?;
    println!("method,n,m,mean_min_error,stderr,mean_scaled_error,mean_best_t");
    for r in &report.summary {
        println!(
            "{},{},{},{},{},{},{}",
            r.method, r.n, r.m, r.mean_min_error, r.stderr, r.mean_scaled_error, r.mean_best_t
        );
    }
    eprintln!("wrote trials.csv, curves.csv and summary.csv to {}", config.output_path.display());
    Ok(())
}

fn run_diagnose(args: DiagnoseArgs) -> kcgm::Result<()> {
    let lambdas = parse_lambda_grid(&args.lambda_grid)?;
    let file = match &args.config {
        Some(p) => read_fit_file(p)?,
        None => FitFile::default(),
    };
    let mut params = file.sketch.unwrap_or_else(|| SketchParams {
        m: None,
        ..SketchParams::new(SketchKind::Ros, 0, args.seed)
    });
    if let Some(kind) = &args.kind {
        params.kind = parse_kind(kind)?;
    }
    if args.m.is_some() {
        params.m = args.m;
    }
    let m = match params.m {
        Some(m) => m,
        None => default_m(params.kind, args.n)?,
    };
    let data = generate_data(args.n, 1.0, args.seed)?;
    let kernel = KernelSpec::sobolev();
    let x = data.points();
    let k = gram(&kernel, x, x)?;
    let op = sketch::build(&params, m, args.n, Some(k.entries()))?;
    let c = match op.indices() {
        Some(idx) if params.kind.is_subsampling() => {
            let sub = x.select(&idx);
            let k_mx = gram(&kernel, &sub, x)?;
            let k_mm = gram(&kernel, &sub, &sub)?;
            nystrom_factors(k_mx.entries(), k_mm.entries()).1
        }
        _ => sketched_factors(k.entries(), &op).1,
    };
    let rows = spectral_sweep(k.entries(), &c, &lambdas)?;
    println!("lambda,effective_dimension,projection_error,m");
    for r in rows {
        println!("{},{},{},{}", r.lambda, r.effective_dimension, r.projection_error, m);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Experiment(a) => run_experiment_cmd(a),
        Command::Diagnose(a) => run_diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
