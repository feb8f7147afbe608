//! End-to-end projected KCGM: reduce, solve, stop, and lift the chosen
//! iterate to a kernel expansion. Also hosts the kernel ridge regression
//! baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{sketch_dimension_schedule, ScheduleRegime};
use crate::error::{Error, Result};
use crate::harness::Dataset;
use crate::kernel::{gram, kernel_matrix_unchecked, KernelSpec, PointSet};
use crate::krylov::{krylov_solve, SolveTrace};
use crate::reduce::{reduce_classic, reduce_nystrom, reduce_sketched, ReducedProblem, Variant};
use crate::sketch::{self, SketchKind, SketchOperator, SketchParams};

/// How the iteration count `t̂` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Stopping {
    FixedT { t: usize },
    /// First `t` whose residual is at most [`stopping_threshold`].
    Threshold {
        zeta: f64,
        gamma: f64,
        #[serde(default = "default_tau")]
        tau: f64,
        delta: f64,
    },
    /// Iterate minimizing an externally supplied error.
    OracleMinError,
}

fn default_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub variant: Variant,
    /// Ignored by the classic variant.
    #[serde(default)]
    pub sketch: Option<SketchParams>,
    /// Defaults to the sketch dimension `m` (to `n` for the classic variant).
    #[serde(default)]
    pub t_max: Option<usize>,
    pub stopping: Stopping,
}

impl SolverConfig {
    pub fn classic(stopping: Stopping) -> Self {
        Self {
            variant: Variant::Classic,
            sketch: None,
            t_max: None,
            stopping,
        }
    }

    pub fn sketched(sketch: SketchParams, stopping: Stopping) -> Self {
        Self {
            variant: Variant::Sketched,
            sketch: Some(sketch),
            t_max: None,
            stopping,
        }
    }

    pub fn nystrom(sketch: SketchParams, stopping: Stopping) -> Self {
        Self {
            variant: Variant::Nystrom,
            sketch: Some(sketch),
            t_max: None,
            stopping,
        }
    }

    pub fn with_t_max(mut self, t_max: usize) -> Self {
        self.t_max = Some(t_max);
        self
    }
}

/// `f(x) = scale · Σ_i coefficients_i · k(anchors_i, x)`.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub anchors: PointSet,
    pub coefficients: DVector<f64>,
    pub kernel: KernelSpec,
    pub scale: f64,
    pub chosen_t: usize,
}

impl Predictor {
    pub fn zero(anchors: PointSet, kernel: KernelSpec, scale: f64) -> Self {
        let n = anchors.len();
        Self {
            anchors,
            coefficients: DVector::zeros(n),
            kernel,
            scale,
            chosen_t: 0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.kernel.check_point(x)?;
        if x.len() != self.anchors.dim() {
            return Err(Error::invalid("point dimension does not match the anchors"));
        }
        let s: f64 = self
            .anchors
            .iter()
            .zip(self.coefficients.iter())
            .map(|(a, c)| c * self.kernel.eval_unchecked(a, x))
            .sum();
        Ok(self.scale * s)
    }

    pub fn predict_many(&self, points: &PointSet) -> Result<DVector<f64>> {
        if points.is_empty() {
            return Ok(DVector::zeros(0));
        }
        let e = crate::kernel::kernel_matrix(&self.kernel, points, &self.anchors)?;
        Ok(e * &self.coefficients * self.scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingDecision {
    /// Residual threshold, for threshold stopping.
    pub threshold_value: Option<f64>,
    pub t_hat: usize,
    pub residual_at_stop: f64,
    /// False when the threshold was never reached within `t_max`.
    pub reached: bool,
}

/// Threshold `τ log^{3/2}(2/δ) n^{−(ζ+1/2)/max(1, 2ζ+γ)} b^{ζ+1/2}` with
/// `b = max(1, γ ln n)` when `2ζ + γ <= 1` and `b = 1` otherwise.
pub fn stopping_threshold(n: usize, zeta: f64, gamma: f64, tau: f64, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(Error::invalid(format!("zeta must be >= 0, got {zeta}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma must be in (0, 1], got {gamma}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must be in (0, 1), got {delta}")));
    }
    let n = n as f64;
    let exponent = (zeta + 0.5) / (2.0 * zeta + gamma).max(1.0);
    let b = log_factor(n, zeta, gamma);
    Ok(tau * (2.0 / delta).ln().powf(1.5) * n.powf(-exponent) * b.powf(zeta + 0.5))
}

/// `(1 ∨ γ ln n)` raised to the indicator of `2ζ + γ <= 1`.
pub(crate) fn log_factor(n: f64, zeta: f64, gamma: f64) -> f64 {
    if 2.0 * zeta + gamma <= 1.0 {
        (gamma * n.ln()).max(1.0)
    } else {
        1.0
    }
}

/// First (1-based) `t` with `residuals[t-1] <= threshold`.
pub fn first_crossing(residuals: &[f64], threshold: f64) -> Option<usize> {
    residuals.iter().position(|&r| r <= threshold).map(|i| i + 1)
}

/// The reduced problem and the whole iterate trace for one dataset.
#[derive(Debug, Clone)]
pub struct FitPath {
    pub problem: ReducedProblem,
    pub trace: SolveTrace,
    pub kernel: KernelSpec,
    pub sketch: Option<SketchOperator>,
    /// Projection dimension (sample size for the classic variant).
    pub m: usize,
}

impl FitPath {
    /// Kernel-expansion coefficients of `a_t`; zero for `t = 0` or a trivial
    /// trace. Past the end of the trace the last iterate is used.
    pub fn coefficients(&self, t: usize) -> DVector<f64> {
        if t == 0 || self.trace.is_empty() {
            return DVector::zeros(self.problem.lift.anchors.len());
        }
        let t = t.min(self.trace.len());
        self.problem.coefficients(&self.trace.iterates[t - 1])
    }

    pub fn predictor(&self, t: usize) -> Predictor {
        let lift = &self.problem.lift;
        Predictor {
            anchors: lift.anchors.clone(),
            coefficients: self.coefficients(t),
            kernel: self.kernel,
            scale: lift.scale,
            chosen_t: t.min(self.trace.len()),
        }
    }

    pub fn t_max(&self) -> usize {
        self.trace.len()
    }

    /// Predictions of every iterate `t = 1..=len` at `points`, one vector per
    /// iterate. The kernel matrix against the anchors is formed once.
    pub fn predictions(&self, points: &PointSet) -> Result<Vec<DVector<f64>>> {
        let lift = &self.problem.lift;
        for p in points.iter() {
            self.kernel.check_point(p)?;
        }
        let e = kernel_matrix_unchecked(&self.kernel, points, &lift.anchors, lift.scale);
        Ok((1..=self.trace.len()).map(|t| &e * self.coefficients(t)).collect())
    }
}

fn default_m(variant: Variant, kind: SketchKind, n: usize) -> Result<usize> {
    let regime = match (variant, kind) {
        (_, SketchKind::Identity) => return Ok(n),
        (Variant::Nystrom, _) => ScheduleRegime::ExperimentNystrom,
        (_, k) if k.is_subsampling() => ScheduleRegime::ExperimentNystrom,
        _ => ScheduleRegime::ExperimentSketched,
    };
    Ok(sketch_dimension_schedule(n, 0.5, 0.5, regime)?.min(n))
}

/// Reduces and solves, keeping every iterate up to `t_max`.
pub fn fit_path(data: &Dataset, kernel: &KernelSpec, config: &SolverConfig) -> Result<FitPath> {
    let x = data.points();
    let n = data.len();
    let y_bar = data.y_bar();
    let full_gram = || gram(kernel, x, x);
    let (problem, sketch, m) = match config.variant {
        Variant::Classic => (reduce_classic(&full_gram()?, &y_bar)?, None, n),
        variant => {
            let params = config
                .sketch
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{} variant needs sketch parameters", variant.name())))?;
            let m = match params.m {
                Some(m) => m,
                None => default_m(variant, params.kind, n)?,
            };
            // The Nyström variant needs the full Gram matrix only for leverage scores.
            let k = match (variant, params.kind) {
                (Variant::Nystrom, kind) if kind != SketchKind::NystromAls => None,
                _ => Some(full_gram()?),
            };
            let op = sketch::build(params, m, n, k.as_ref().map(|k| k.entries()))?;
            let problem = if let (Variant::Sketched, Some(k)) = (variant, &k) {
                reduce_sketched(k, &op, &y_bar)?
            } else {
                let idx = op.indices().ok_or_else(|| {
                    Error::Config(format!(
                        "Nyström variant needs a subsampling sketch, got {}",
                        params.kind
                    ))
                })?;
                let sub = x.select(&idx);
                let k_mx = gram(kernel, &sub, x)?;
                let k_mm = gram(kernel, &sub, &sub)?;
                reduce_nystrom(&k_mx, &k_mm, &y_bar)?
            };
            (problem, Some(op), m)
        }
    };
    let t_max = config.t_max.unwrap_or(m);
    let trace = krylov_solve(&problem.k_tilde, &problem.b, t_max, problem.residual_norm())?;
    Ok(FitPath {
        problem,
        trace,
        kernel: *kernel,
        sketch,
        m,
    })
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub predictor: Predictor,
    pub decision: StoppingDecision,
    pub path: FitPath,
}

/// Fits and applies the configured stopping rule. `oracle` scores a
/// predictor (lower is better) and is required for
/// [`Stopping::OracleMinError`].
pub fn fit(
    data: &Dataset,
    kernel: &KernelSpec,
    config: &SolverConfig,
    oracle: Option<&dyn Fn(&Predictor) -> f64>,
) -> Result<FitOutput> {
    let path = fit_path(data, kernel, config)?;
    let decision = decide(&path, config.stopping, data.len(), oracle)?;
    Ok(FitOutput {
        predictor: path.predictor(decision.t_hat),
        decision,
        path,
    })
}

fn decide(
    path: &FitPath,
    stopping: Stopping,
    n: usize,
    oracle: Option<&dyn Fn(&Predictor) -> f64>,
) -> Result<StoppingDecision> {
    let trace = &path.trace;
    let residual_at = |t: usize| trace.residual(t).unwrap_or(trace.b_norm);
    if trace.trivial {
        let threshold_value = match stopping {
            Stopping::Threshold { zeta, gamma, tau, delta } => {
                Some(stopping_threshold(n, zeta, gamma, tau, delta)?)
            }
            _ => None,
        };
        return Ok(StoppingDecision {
            threshold_value,
            t_hat: 0,
            residual_at_stop: 0.0,
            reached: true,
        });
    }
    Ok(match stopping {
        Stopping::FixedT { t } => {
            if t == 0 {
                return Err(Error::Config("fixed stopping needs t >= 1".into()));
            }
            let t_hat = t.min(trace.len());
            StoppingDecision {
                threshold_value: None,
                t_hat,
                residual_at_stop: residual_at(t_hat),
                reached: true,
            }
        }
        Stopping::Threshold { zeta, gamma, tau, delta } => {
            let threshold = stopping_threshold(n, zeta, gamma, tau, delta)?;
            let (t_hat, reached) = match first_crossing(&trace.residuals, threshold) {
                Some(t) => (t, true),
                None => (trace.len(), false),
            };
            StoppingDecision {
                threshold_value: Some(threshold),
                t_hat,
                residual_at_stop: residual_at(t_hat),
                reached,
            }
        }
        Stopping::OracleMinError => {
            let oracle = oracle.ok_or_else(|| {
                Error::Config("oracle_min_error stopping needs an error oracle".into())
            })?;
            let mut best = (1, f64::INFINITY);
            for t in 1..=trace.len() {
                let err = oracle(&path.predictor(t));
                if err < best.1 {
                    best = (t, err);
                }
            }
            StoppingDecision {
                threshold_value: None,
                t_hat: best.0,
                residual_at_stop: residual_at(best.0),
                reached: true,
            }
        }
    })
}

/// Kernel ridge regression `α = (K_raw + nλI)^{-1} y` on the unnormalized
/// Gram matrix, sharing one eigendecomposition across all `λ`.
#[derive(Debug, Clone)]
pub struct KrrSolver {
    points: PointSet,
    kernel: KernelSpec,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    /// `Vᵀ y`
    projected_y: DVector<f64>,
}

impl KrrSolver {
    pub fn new(data: &Dataset, kernel: &KernelSpec) -> Result<Self> {
        let k = crate::kernel::kernel_matrix(kernel, data.points(), data.points())?;
        let eig = crate::linalg::sym_eigen(&k);
        let projected_y = eig.eigenvectors.transpose() * data.y();
        Ok(Self {
            points: data.points().clone(),
            kernel: *kernel,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            projected_y,
        })
    }

    /// Predictor for one `λ >= 0`; rejects `λ` whose system is singular.
    pub fn predictor(&self, lambda: f64) -> Result<Predictor> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("ridge parameter must be >= 0, got {lambda}")));
        }
        let n = self.points.len() as f64;
        let smax = self.eigenvalues.amax();
        let mut scaled = self.projected_y.clone();
        for (v, s) in scaled.iter_mut().zip(self.eigenvalues.iter()) {
            let d = s.max(0.0) + n * lambda;
            if d <= 1e-12 * smax {
                return Err(Error::invalid(format!("ridge system singular at lambda = {lambda}")));
            }
            *v /= d;
        }
        Ok(Predictor {
            anchors: self.points.clone(),
            coefficients: &self.eigenvectors * scaled,
            kernel: self.kernel,
            scale: 1.0,
            chosen_t: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct KrrFit {
    pub predictor: Predictor,
    pub lambda: f64,
    /// `(λ, criterion)` for every admissible grid point.
    pub errors: Vec<(f64, f64)>,
}

/// Ridge regression with `λ` picked from `lambda_grid` by `criterion`
/// (lower is better). Singular grid points are skipped.
pub fn fit_krr(
    data: &Dataset,
    kernel: &KernelSpec,
    lambda_grid: &[f64],
    criterion: &dyn Fn(&Predictor) -> f64,
) -> Result<KrrFit> {
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if let Some(bad) = lambda_grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::invalid(format!("lambda grid entry {bad} is negative")));
    }
    let solver = KrrSolver::new(data, kernel)?;
    let mut best: Option<(Predictor, f64, f64)> = None;
    let mut errors = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let Ok(p) = solver.predictor(lambda) else {
            continue;
        };
        let err = criterion(&p);
        errors.push((lambda, err));
        if best.as_ref().is_none_or(|b| err < b.2) {
            best = Some((p, lambda, err));
        }
    }
    let (predictor, lambda, _) =
        best.ok_or_else(|| Error::Degenerate("every ridge parameter gave a singular system".into()))?;
    Ok(KrrFit {
        predictor,
        lambda,
        errors,
    })
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}
