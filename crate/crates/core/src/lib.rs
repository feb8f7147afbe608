//! Kernel conjugate-gradient regression with random projections.
//!
//! The estimator minimizes the empirical residual over growing Krylov
//! subspaces of a (possibly projected) kernel operator and is regularized
//! only by the number of iterations. Projections come from matrix sketches
//! (Gaussian, Rademacher, randomized Hadamard) or from Nyström subsampling
//! (uniform or approximate-leverage-score weighted).
//!
//! Pipeline: [`kernel`] builds normalized Gram matrices, [`sketch`] draws the
//! projection, [`reduce`] whitens it into a small symmetric problem,
//! [`krylov`] solves that problem iterate by iterate, and [`solver`] applies a
//! stopping rule and maps the chosen iterate back to a kernel expansion.
//! [`diagnostics`] and [`harness`] cover spectral diagnostics and the
//! synthetic benchmark.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod krylov;
pub mod linalg;
pub mod reduce;
pub mod rng;
pub mod sketch;
pub mod solver;

pub use error::{Error, Result};
pub use kernel::{GramMatrix, KernelFamily, KernelSpec, PointSet};
pub use krylov::{krylov_minres, krylov_weighted, ResidualNorm, SolveTrace};
pub use reduce::{ReducedProblem, Variant};
pub use sketch::{SketchKind, SketchOperator};
pub use solver::{fit, fit_krr, fit_path, Predictor, SolverConfig, Stopping, StoppingDecision};
