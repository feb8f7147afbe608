//! Empirical spectral quantities: effective dimension, projection error and
//! sketch-dimension schedules.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lambda_max, sym_eigen, symmetrize};

/// `tr(K (K + λI)^{-1}) = Σ σ_i / (σ_i + λ)`.
pub fn effective_dimension(k: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !k.is_square() {
        return Err(Error::invalid("effective dimension needs a square matrix"));
    }
    let eig = sym_eigen(k);
    Ok(eig
        .eigenvalues
        .iter()
        .map(|&s| {
            let s = s.max(0.0);
            s / (s + lambda)
        })
        .sum())
}

/// `λ_max(K − CCᵀ)` clipped at zero. This is the squared norm of the
/// residual projection applied to the square root of the empirical
/// covariance operator. An empty `C` gives `λ_max(K)`.
pub fn projection_error(k: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    if !k.is_square() {
        return Err(Error::invalid("projection error needs a square kernel matrix"));
    }
    if c.nrows() != k.nrows() && c.ncols() > 0 {
        return Err(Error::invalid(format!(
            "span factor has {} rows, kernel matrix has {}",
            c.nrows(),
            k.nrows()
        )));
    }
    if c.ncols() == 0 {
        return Ok(lambda_max(k).max(0.0));
    }
    let diff = symmetrize(&(k - c * c.transpose()));
    Ok(lambda_max(&diff).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleRegime {
    /// Sufficient dimension for matrix sketches.
    Sketched,
    /// Sufficient dimension for plain Nyström subsampling; needs `2ζ + γ > 1`.
    Nystrom,
    /// `⌈n^{1/3}⌉`.
    ExperimentSketched,
    /// `⌈n^{2/3}⌉`.
    ExperimentNystrom,
}

impl std::str::FromStr for ScheduleRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sketched" => Ok(Self::Sketched),
            "nystrom" => Ok(Self::Nystrom),
            "experiment_sketched" => Ok(Self::ExperimentSketched),
            "experiment_nystrom" => Ok(Self::ExperimentNystrom),
            other => Err(Error::Config(format!("unknown schedule regime '{other}'"))),
        }
    }
}

/// Smallest integer `m` with `m^3 >= n^p`, for `p` in {1, 2}.
fn ceil_cube_root_of_power(n: usize, p: u32) -> usize {
    let target = (n as u128).pow(p);
    let mut m = (target as f64).cbrt().floor() as u128;
    while m.pow(3) < target {
        m += 1;
    }
    while m > 0 && (m - 1).pow(3) >= target {
        m -= 1;
    }
    m as usize
}

fn ceil_tol(x: f64) -> usize {
    (x - 1e-9 * x.abs().max(1.0)).ceil().max(1.0) as usize
}

/// Projection dimension for `n` samples, with every unknown constant set to
/// one and no projection parameter. Capped at `n`.
pub fn sketch_dimension_schedule(n: usize, zeta: f64, gamma: f64, regime: ScheduleRegime) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let m = match regime {
        ScheduleRegime::ExperimentSketched => ceil_cube_root_of_power(n, 1),
        ScheduleRegime::ExperimentNystrom => ceil_cube_root_of_power(n, 2),
        ScheduleRegime::Sketched | ScheduleRegime::Nystrom => {
            if !(zeta >= 0.0 && zeta.is_finite()) {
                return Err(Error::invalid(format!("zeta must be >= 0, got {zeta}")));
            }
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::invalid(format!("gamma must be in (0, 1], got {gamma}")));
            }
            let nf = n as f64;
            let s = 2.0 * zeta + gamma;
            let log_term = (gamma * nf.ln()).max(1.0);
            let value = if regime == ScheduleRegime::Sketched {
                if s <= 1.0 {
                    nf.powf(gamma) * log_term.powf(-gamma)
                } else if zeta >= 1.0 {
                    nf.powf(gamma * zeta / s)
                } else {
                    nf.powf(gamma / s)
                }
            } else {
                if s <= 1.0 {
                    return Err(Error::invalid(
                        "the Nyström schedule needs 2*zeta + gamma > 1",
                    ));
                }
                nf.powf(zeta.max(1.0) / s) * log_term
            };
            ceil_tol(value)
        }
    };
    Ok(m.min(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub lambda: f64,
    pub effective_dimension: f64,
    pub projection_error: f64,
    pub m_used: usize,
}

/// One report per `λ`; the projection error does not depend on `λ`.
pub fn spectral_sweep(k: &DMatrix<f64>, c: &DMatrix<f64>, lambdas: &[f64]) -> Result<Vec<SpectralReport>> {
    let projection_error = projection_error(k, c)?;
    let eig = sym_eigen(k);
    lambdas
        .iter()
        .map(|&lambda| {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
            }
            let effective_dimension = eig.eigenvalues.iter().map(|&s| s.max(0.0) / (s.max(0.0) + lambda)).sum();
            Ok(SpectralReport {
                lambda,
                effective_dimension,
                projection_error,
                m_used: c.ncols(),
            })
        })
        .collect()
}
