//! Synthetic benchmark: data generation, error estimates and the
//! experiment driver.

mod experiment;

pub use experiment::{
    loglog_slope, run_experiment, CurveRow, ExperimentConfig, ExperimentReport, IterationError, KrrGrid, MRule,
    Method, SummaryRow, TrialResult,
};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::PointSet;
use crate::rng::{stream, StreamTag};
use crate::solver::Predictor;

/// Inputs and responses of one regression sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: PointSet,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(points: PointSet, y: DVector<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if points.len() != y.len() {
            return Err(Error::invalid(format!(
                "{} points but {} responses",
                points.len(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("responses must be finite"));
        }
        Ok(Self { points, y })
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `y / √n`
    pub fn y_bar(&self) -> DVector<f64> {
        &self.y / (self.len() as f64).sqrt()
    }
}

/// The benchmark target `|x − 1/2| − 1/2`.
pub fn regression_function(x: f64) -> f64 {
    (x - 0.5).abs() - 0.5
}

/// `x_i ~ U[0, 1]`, `y_i = f(x_i) + noise_sd · ξ_i` with standard normal
/// `ξ_i`. Inputs and noise use separate streams of `seed`.
pub fn generate_data(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    let mut inputs = stream(seed, StreamTag::DataInputs, 0);
    let mut noise = stream(seed, StreamTag::DataNoise, 0);
    let xs: Vec<f64> = (0..n).map(|_| inputs.random::<f64>()).collect();
    let y = DVector::from_iterator(
        n,
        xs.iter().map(|&x| {
            let xi: f64 = noise.sample(StandardNormal);
            regression_function(x) + noise_sd * xi
        }),
    );
    Dataset::new(PointSet::from_scalars(xs), y)
}

/// Midpoint rule on `[0, 1]` for the squared distance to the target.
#[derive(Debug, Clone)]
pub struct Quadrature {
    points: PointSet,
    target: DVector<f64>,
}

pub const DEFAULT_QUADRATURE_POINTS: usize = 2048;
pub const MIN_QUADRATURE_POINTS: usize = 64;

impl Quadrature {
    pub fn new(count: usize) -> Result<Self> {
        if count < MIN_QUADRATURE_POINTS {
            return Err(Error::invalid(format!(
                "need at least {MIN_QUADRATURE_POINTS} quadrature points, got {count}"
            )));
        }
        let xs: Vec<f64> = (0..count).map(|j| (j as f64 + 0.5) / count as f64).collect();
        let target = DVector::from_iterator(count, xs.iter().map(|&x| regression_function(x)));
        Ok(Self {
            points: PointSet::from_scalars(xs),
            target,
        })
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    /// Mean squared distance between `values` (at the nodes) and the target.
    pub fn error(&self, values: &DVector<f64>) -> f64 {
        (values - &self.target).norm_squared() / self.target.len() as f64
    }

    pub fn prediction_error(&self, predictor: &Predictor) -> Result<f64> {
        Ok(self.error(&predictor.predict_many(&self.points)?))
    }
}

/// `(1/N) Σ_j (f̂(u_j) − f(u_j))²` over midpoints `u_j = (j − 1/2)/N`.
pub fn prediction_error(predictor: &Predictor, quadrature_points: usize) -> Result<f64> {
    Quadrature::new(quadrature_points)?.prediction_error(predictor)
}

/// `(1/n) Σ_i (f̂(x_i) − y_i)²`.
pub fn training_error(predictor: &Predictor, data: &Dataset) -> Result<f64> {
    let fitted = predictor.predict_many(data.points())?;
    Ok(mean_squared_residual(&fitted, data.y()))
}

pub(crate) fn mean_squared_residual(fitted: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (fitted - y).norm_squared() / y.len() as f64
}
