use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{generate_data, mean_squared_residual, Dataset, Quadrature, DEFAULT_QUADRATURE_POINTS, MIN_QUADRATURE_POINTS};
use crate::diagnostics::{sketch_dimension_schedule, ScheduleRegime};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::reduce::Variant;
use crate::rng::{derive_seed, StreamTag};
use crate::sketch::{SketchKind, SketchParams};
use crate::solver::{fit_path, log_grid, KrrSolver, SolverConfig, Stopping};

/// How the projection dimension follows `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum MRule {
    /// `⌈n^{1/3}⌉` for matrix sketches, `⌈n^{2/3}⌉` for subsampling.
    Experiment,
    /// Theory schedules with unit constants.
    Theory { zeta: f64, gamma: f64 },
    Fixed { m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrrGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for KrrGrid {
    fn default() -> Self {
        Self {
            min: 1e-6,
            max: 1.0,
            count: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchTuning {
    #[serde(default = "default_als_lambda")]
    pub lambda: f64,
    #[serde(default = "default_l", rename = "L")]
    pub l_factor: f64,
}

fn default_als_lambda() -> f64 {
    1e-3
}

fn default_l() -> f64 {
    1.0
}

impl Default for SketchTuning {
    fn default() -> Self {
        Self {
            lambda: default_als_lambda(),
            l_factor: default_l(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_grid: Vec<usize>,
    pub trials: usize,
    /// Matrix kinds run the sketched variant, subsampling kinds the Nyström
    /// variant and `identity` the classic one.
    pub sketch_kinds: Vec<SketchKind>,
    #[serde(default = "yes")]
    pub include_krr: bool,
    #[serde(default = "default_m_rule")]
    pub m_rule: MRule,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_quadrature")]
    pub quadrature_points: usize,
    /// Directory receiving `trials.csv`, `curves.csv` and `summary.csv`.
    pub output_path: PathBuf,
    #[serde(default)]
    pub sketch: SketchTuning,
    #[serde(default)]
    pub krr_grid: KrrGrid,
    /// When false the runtime columns are written as 0 so that reruns are
    /// byte-identical.
    #[serde(default = "yes")]
    pub record_runtime: bool,
}

fn yes() -> bool {
    true
}

fn default_m_rule() -> MRule {
    MRule::Experiment
}

fn default_noise() -> f64 {
    1.0
}

fn default_quadrature() -> usize {
    DEFAULT_QUADRATURE_POINTS
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative output paths are resolved against the config file's
    /// directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.output_path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_path = dir.join(&cfg.output_path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("n_grid must be a nonempty list of positive sizes".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.sketch_kinds.is_empty() && !self.include_krr {
            return bad("no methods selected".into());
        }
        if self.quadrature_points < MIN_QUADRATURE_POINTS {
            return bad(format!("quadrature_points must be >= {MIN_QUADRATURE_POINTS}"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be >= 0".into());
        }
        if let MRule::Fixed { m } = self.m_rule {
            if m == 0 {
                return bad("fixed m must be positive".into());
            }
        }
        let g = self.krr_grid;
        if self.include_krr && !(g.min > 0.0 && g.max >= g.min && g.count >= 1) {
            return bad("krr_grid needs 0 < min <= max and count >= 1".into());
        }
        if self.sketch_kinds.contains(&SketchKind::Ros) {
            if let Some(n) = self.n_grid.iter().find(|n| !n.is_power_of_two()) {
                return bad(format!("ros sketches need power-of-two n, got {n}"));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut out: Vec<Method> = self.sketch_kinds.iter().map(|&k| Method::Kcgm(k)).collect();
        if self.include_krr {
            out.push(Method::Krr);
        }
        out.dedup();
        out
    }

    fn m_for(&self, method: Method, n: usize) -> Result<usize> {
        let Method::Kcgm(kind) = method else {
            return Ok(0);
        };
        if kind == SketchKind::Identity {
            return Ok(n);
        }
        let m = match (self.m_rule, kind.is_subsampling()) {
            (MRule::Fixed { m }, _) => m,
            (MRule::Experiment, false) => sketch_dimension_schedule(n, 0.0, 1.0, ScheduleRegime::ExperimentSketched)?,
            (MRule::Experiment, true) => sketch_dimension_schedule(n, 0.0, 1.0, ScheduleRegime::ExperimentNystrom)?,
            (MRule::Theory { zeta, gamma }, false) => {
                sketch_dimension_schedule(n, zeta, gamma, ScheduleRegime::Sketched)?
            }
            (MRule::Theory { zeta, gamma }, true) => sketch_dimension_schedule(n, zeta, gamma, ScheduleRegime::Nystrom)?,
        };
        if kind == SketchKind::NystromAls {
            Ok(m)
        } else {
            Ok(m.min(n))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Kcgm(SketchKind),
    Krr,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Krr => "krr".into(),
            Method::Kcgm(SketchKind::Identity) => "classic".into(),
            Method::Kcgm(k) if k.is_subsampling() => k.name().to_string(),
            Method::Kcgm(k) => format!("sketched_{}", k.name()),
        }
    }

    pub fn variant(&self) -> Option<Variant> {
        match self {
            Method::Krr => None,
            Method::Kcgm(SketchKind::Identity) => Some(Variant::Classic),
            Method::Kcgm(k) if k.is_subsampling() => Some(Variant::Nystrom),
            Method::Kcgm(_) => Some(Variant::Sketched),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationError {
    pub t: usize,
    pub prediction_error: f64,
    pub training_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub method: String,
    pub n: usize,
    /// Projection dimension; 0 for ridge regression.
    pub m: usize,
    pub trial: usize,
    pub trial_seed: u64,
    /// `t = 1..=t_max` for the iterative methods; a single `t = 0` entry at
    /// the selected ridge parameter for ridge regression.
    pub per_iteration_errors: Vec<IterationError>,
    pub min_error: f64,
    pub min_error_t: usize,
    pub runtime_ms: f64,
}

impl TrialResult {
    pub fn best(&self) -> &IterationError {
        self.per_iteration_errors
            .iter()
            .find(|e| e.t == self.min_error_t)
            .expect("min_error_t is one of the recorded iterations")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub n: usize,
    pub m: usize,
    pub mean_min_error: f64,
    pub stderr: f64,
    /// `n^{2/3}` times the mean minimal error.
    pub mean_scaled_error: f64,
    pub mean_best_t: f64,
    pub mean_runtime_ms: f64,
}

/// Trial-averaged errors of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub method: String,
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub mean_prediction_error: f64,
    pub mean_training_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub trials: Vec<TrialResult>,
    pub summary: Vec<SummaryRow>,
    pub curves: Vec<CurveRow>,
}

impl ExperimentReport {
    pub fn summary_for(&self, method: &str, n: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.n == n)
    }

    pub fn curve(&self, method: &str, n: usize) -> Vec<&CurveRow> {
        self.curves.iter().filter(|r| r.method == method && r.n == n).collect()
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("trials.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["method", "n", "m", "trial", "t", "prediction_error", "training_error"])?;
        for r in &self.trials {
            let best = r.best();
            w.write_record([
                r.method.clone(),
                r.n.to_string(),
                r.m.to_string(),
                r.trial.to_string(),
                best.t.to_string(),
                best.prediction_error.to_string(),
                best.training_error.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("curves.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["method", "n", "m", "t", "mean_prediction_error", "mean_training_error"])?;
        for r in &self.curves {
            w.write_record([
                r.method.clone(),
                r.n.to_string(),
                r.m.to_string(),
                r.t.to_string(),
                r.mean_prediction_error.to_string(),
                r.mean_training_error.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "method",
            "n",
            "m",
            "mean_min_error",
            "stderr",
            "mean_scaled_error",
            "mean_best_t",
            "mean_runtime_ms",
        ])?;
        for r in &self.summary {
            w.write_record([
                r.method.clone(),
                r.n.to_string(),
                r.m.to_string(),
                r.mean_min_error.to_string(),
                r.stderr.to_string(),
                r.mean_scaled_error.to_string(),
                r.mean_best_t.to_string(),
                r.mean_runtime_ms.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

fn check_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".kcgm-write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Runs every `(n, method, trial)` cell and writes the CSV files. The output
/// directory is checked before any computation.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    check_writable(&config.output_path)?;
    let report = compute(config)?;
    report.write_csv(&config.output_path)?;
    Ok(report)
}

impl ExperimentConfig {
    /// Same as [`run_experiment`] without touching the file system.
    pub fn run_in_memory(&self) -> Result<ExperimentReport> {
        self.validate()?;
        compute(self)
    }
}

fn trial_seed(seed: u64, n: usize, trial: usize) -> u64 {
    derive_seed(seed, StreamTag::Trial, ((n as u64) << 32) | trial as u64)
}

fn compute(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let quadrature = Quadrature::new(config.quadrature_points)?;
    let methods = config.methods();
    let cells: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.trials).map(move |t| (n, t)))
        .collect();
    let run_cell = |&(n, trial): &(usize, usize)| run_cell(config, &methods, &quadrature, n, trial);
    let nested: Vec<Result<Vec<TrialResult>>> = map_cells(&cells, run_cell)?;
    let mut trials = Vec::with_capacity(cells.len() * methods.len());
    for cell in nested {
        trials.extend(cell?);
    }
    trials.sort_by(|a, b| (&a.method, a.n, a.trial).cmp(&(&b.method, b.n, b.trial)));
    if !config.record_runtime {
        for t in &mut trials {
            t.runtime_ms = 0.0;
        }
    }
    let (summary, curves) = aggregate(&trials);
    Ok(ExperimentReport { trials, summary, curves })
}

#[cfg(feature = "parallel")]
fn map_cells<T, F>(cells: &[(usize, usize)], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&(usize, usize)) -> T + Sync,
{
    use rayon::prelude::*;
    let threads = std::env::var("KCGM_THREADS").ok().and_then(|s| s.parse::<usize>().ok());
    match threads {
        Some(k) if k > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(|| cells.par_iter().map(&f).collect()))
        }
        _ => Ok(cells.par_iter().map(&f).collect()),
    }
}

#[cfg(not(feature = "parallel"))]
fn map_cells<T, F>(cells: &[(usize, usize)], f: F) -> Result<Vec<T>>
where
    F: Fn(&(usize, usize)) -> T,
{
    Ok(cells.iter().map(f).collect())
}

fn run_cell(
    config: &ExperimentConfig,
    methods: &[Method],
    quadrature: &Quadrature,
    n: usize,
    trial: usize,
) -> Result<Vec<TrialResult>> {
    let seed = trial_seed(config.seed, n, trial);
    let data = generate_data(n, config.noise_sd, seed)?;
    let kernel = KernelSpec::sobolev();
    methods
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let start = Instant::now();
            let m = config.m_for(method, n)?;
            let per_iteration_errors = match method {
                Method::Krr => krr_errors(config, &data, &kernel, quadrature)?,
                Method::Kcgm(kind) => {
                    let sketch_seed = derive_seed(seed, StreamTag::SketchSeed, i as u64);
                    let params = SketchParams {
                        lambda: config.sketch.lambda,
                        l_factor: config.sketch.l_factor,
                        ..SketchParams::new(kind, m, sketch_seed)
                    };
                    let variant = method.variant().expect("iterative method");
                    let solver = SolverConfig {
                        variant,
                        sketch: (variant != Variant::Classic).then_some(params),
                        t_max: Some(m),
                        stopping: Stopping::FixedT { t: 1 },
                    };
                    kcgm_errors(&solver, &data, &kernel, quadrature, m)?
                }
            };
            let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            let best = per_iteration_errors
                .iter()
                .fold(None::<&IterationError>, |b, e| match b {
                    Some(b) if b.prediction_error <= e.prediction_error => Some(b),
                    _ => Some(e),
                })
                .expect("at least one iteration");
            Ok(TrialResult {
                method: method.name(),
                n,
                m,
                trial,
                trial_seed: seed,
                min_error: best.prediction_error,
                min_error_t: best.t,
                per_iteration_errors,
                runtime_ms,
            })
        })
        .collect()
}

fn kcgm_errors(
    solver: &SolverConfig,
    data: &Dataset,
    kernel: &KernelSpec,
    quadrature: &Quadrature,
    t_max: usize,
) -> Result<Vec<IterationError>> {
    let path = fit_path(data, kernel, solver)?;
    let on_grid = path.predictions(quadrature.points())?;
    let on_data = path.predictions(data.points())?;
    let zero_grid = DVector::zeros(quadrature.points().len());
    let zero_data = DVector::zeros(data.len());
    Ok((1..=t_max.max(1))
        .map(|t| {
            // A trivial trace (zero response) has no iterates; its predictor is zero.
            let (g, d) = match path.trace.len() {
                0 => (&zero_grid, &zero_data),
                len => (&on_grid[t.min(len) - 1], &on_data[t.min(len) - 1]),
            };
            IterationError {
                t,
                prediction_error: quadrature.error(g),
                training_error: mean_squared_residual(d, data.y()),
            }
        })
        .collect())
}

fn krr_errors(
    config: &ExperimentConfig,
    data: &Dataset,
    kernel: &KernelSpec,
    quadrature: &Quadrature,
) -> Result<Vec<IterationError>> {
    let solver = KrrSolver::new(data, kernel)?;
    let g = config.krr_grid;
    let mut best: Option<IterationError> = None;
    for lambda in log_grid(g.min, g.max, g.count) {
        let Ok(p) = solver.predictor(lambda) else {
            continue;
        };
        let e = IterationError {
            t: 0,
            prediction_error: quadrature.prediction_error(&p)?,
            training_error: mean_squared_residual(&p.predict_many(data.points())?, data.y()),
        };
        if best.is_none_or(|b| e.prediction_error < b.prediction_error) {
            best = Some(e);
        }
    }
    best.map(|b| vec![b])
        .ok_or_else(|| Error::Degenerate("every ridge parameter gave a singular system".into()))
}

fn aggregate(trials: &[TrialResult]) -> (Vec<SummaryRow>, Vec<CurveRow>) {
    let mut summary = Vec::new();
    let mut curves = Vec::new();
    let mut start = 0;
    while start < trials.len() {
        let head = &trials[start];
        let end = start
            + trials[start..]
                .iter()
                .take_while(|t| t.method == head.method && t.n == head.n)
                .count();
        let group = &trials[start..end];
        let k = group.len() as f64;
        let mean = group.iter().map(|t| t.min_error).sum::<f64>() / k;
        let var = if group.len() > 1 {
            group.iter().map(|t| (t.min_error - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        summary.push(SummaryRow {
            method: head.method.clone(),
            n: head.n,
            m: head.m,
            mean_min_error: mean,
            stderr: (var / k).sqrt(),
            mean_scaled_error: (head.n as f64).powf(2.0 / 3.0) * mean,
            mean_best_t: group.iter().map(|t| t.min_error_t as f64).sum::<f64>() / k,
            mean_runtime_ms: group.iter().map(|t| t.runtime_ms).sum::<f64>() / k,
        });
        let len = group.iter().map(|t| t.per_iteration_errors.len()).min().unwrap_or(0);
        for i in 0..len {
            let t = head.per_iteration_errors[i].t;
            curves.push(CurveRow {
                method: head.method.clone(),
                n: head.n,
                m: head.m,
                t,
                mean_prediction_error: group.iter().map(|r| r.per_iteration_errors[i].prediction_error).sum::<f64>() / k,
                mean_training_error: group.iter().map(|r| r.per_iteration_errors[i].training_error).sum::<f64>() / k,
            });
        }
        start = end;
    }
    (summary, curves)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("slope needs at least two matched points"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("slope needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope needs distinct x values"));
    }
    Ok(sxy / sxx)
}
