//! wasm-bindgen bindings for the single-page demo in `www/`.

use kcgm::diagnostics::projection_error;
use kcgm::harness::{generate_data, regression_function, Dataset, Quadrature};
use kcgm::kernel::{gram, KernelSpec, PointSet};
use kcgm::reduce::{nystrom_factors, sketched_factors};
use kcgm::sketch::{self, SketchKind, SketchParams};
use kcgm::solver::{fit_path, log_grid, FitPath, KrrSolver, SolverConfig, Stopping};
use wasm_bindgen::prelude::*;

/// Number of points in the plotted grid.
pub const GRID_POINTS: usize = 201;

fn js_err(e: kcgm::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn plot_grid() -> PointSet {
    PointSet::from_scalars((0..GRID_POINTS).map(|i| i as f64 / (GRID_POINTS - 1) as f64).collect())
}

#[wasm_bindgen]
pub struct Session {
    data: Dataset,
    kernel: KernelSpec,
    quadrature: Quadrature,
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, seed: u64, noise_sd: f64) -> Result<Session, JsError> {
        Ok(Session {
            data: generate_data(n, noise_sd, seed).map_err(js_err)?,
            kernel: KernelSpec::sobolev(),
            quadrature: Quadrature::new(512).map_err(js_err)?,
        })
    }

    pub fn xs(&self) -> Vec<f64> {
        self.data.points().coords().to_vec()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.data.y().iter().copied().collect()
    }

    pub fn grid(&self) -> Vec<f64> {
        plot_grid().coords().to_vec()
    }

    pub fn target(&self) -> Vec<f64> {
        plot_grid().coords().iter().map(|&x| regression_function(x)).collect()
    }

    fn path(&self, method: &str, m: usize, t_max: usize, seed: u64) -> Result<FitPath, JsError> {
        let stop = Stopping::FixedT { t: 1 };
        let n = self.data.len();
        let config = match method {
            "classic" => SolverConfig::classic(stop),
            "ros" | "gaussian" | "rademacher" => {
                let kind: SketchKind = method.parse().map_err(js_err)?;
                SolverConfig::sketched(SketchParams::new(kind, m.min(n), seed), stop)
            }
            "nystrom_plain" | "nystrom_als" => {
                let kind: SketchKind = method.parse().map_err(js_err)?;
                SolverConfig::nystrom(SketchParams::new(kind, m, seed), stop)
            }
            other => return Err(JsError::new(&format!("unknown method `{other}`"))),
        };
        fit_path(&self.data, &self.kernel, &config.with_t_max(t_max.max(1))).map_err(js_err)
    }

    /// Predictions on the plot grid after `t` iterations.
    pub fn fit_curve(&self, method: &str, m: usize, t: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        let path = self.path(method, m, t, seed)?;
        let p = path.predictor(t);
        Ok(p.predict_many(&plot_grid()).map_err(js_err)?.iter().copied().collect())
    }

    /// Prediction errors for `t = 1..=t_max`, followed by the training
    /// errors for the same iterations.
    pub fn regularization_path(&self, method: &str, m: usize, t_max: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        let path = self.path(method, m, t_max, seed)?;
        let on_grid = path.predictions(self.quadrature.points()).map_err(js_err)?;
        let on_data = path.predictions(self.data.points()).map_err(js_err)?;
        let n = self.data.len() as f64;
        let mut out: Vec<f64> = on_grid.iter().map(|v| self.quadrature.error(v)).collect();
        out.extend(on_data.iter().map(|v| (v - self.data.y()).norm_squared() / n));
        Ok(out)
    }

    /// Best ridge-regression prediction error over a log grid of `λ`.
    pub fn krr_error(&self) -> Result<f64, JsError> {
        let solver = KrrSolver::new(&self.data, &self.kernel).map_err(js_err)?;
        let mut best = f64::INFINITY;
        for lambda in log_grid(1e-6, 1.0, 12) {
            if let Ok(p) = solver.predictor(lambda) {
                best = best.min(self.quadrature.prediction_error(&p).map_err(js_err)?);
            }
        }
        Ok(best)
    }

    /// `λ_max(K − CCᵀ)` for each projection dimension in `ms`, averaged over
    /// `draws` sketches.
    pub fn projection_error_sweep(&self, kind: &str, ms: Vec<u32>, draws: u32) -> Result<Vec<f64>, JsError> {
        let kind: SketchKind = kind.parse().map_err(js_err)?;
        let x = self.data.points();
        let n = x.len();
        let k = gram(&self.kernel, x, x).map_err(js_err)?;
        ms.iter()
            .map(|&m| {
                let m = m as usize;
                let mut total = 0.0;
                for seed in 0..draws.max(1) as u64 {
                    let op = sketch::build(&SketchParams::new(kind, m, seed), m, n, Some(k.entries())).map_err(js_err)?;
                    let c = if kind.is_subsampling() {
                        let sub = x.select(&op.indices().expect("subsampling sketch"));
                        let k_mx = gram(&self.kernel, &sub, x).map_err(js_err)?;
                        let k_mm = gram(&self.kernel, &sub, &sub).map_err(js_err)?;
                        nystrom_factors(k_mx.entries(), k_mm.entries()).1
                    } else {
                        sketched_factors(k.entries(), &op).1
                    };
                    total += projection_error(k.entries(), &c).map_err(js_err)?;
                }
                Ok(total / draws.max(1) as f64)
            })
            .collect()
    }
}
