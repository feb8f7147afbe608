//! Kernel functions and normalized Gram matrices.
//!
//! For point sets `x` (size n) and `x̃` (size ñ) the Gram matrix carries the
//! sampling-operator normalization `K[i][j] = k(x_i, x̃_j) / sqrt(n * ñ)`, so
//! that `K_xx` has the same nonzero spectrum as the empirical covariance
//! operator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite set of points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be positive"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    /// One-dimensional points.
    pub fn from_scalars(xs: Vec<f64>) -> Self {
        Self { dim: 1, coords: xs }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Points at `indices`, in that order; repeats are kept.
    pub fn select(&self, indices: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        PointSet {
            dim: self.dim,
            coords,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum KernelFamily {
    /// `1 + min(x, x')` on `[0, 1]`.
    SobolevFirstOrder,
    /// `exp(-|x - x'|^2 / (2 bandwidth^2))`.
    Gaussian { bandwidth: f64 },
    Linear,
}

/// A bounded positive-definite kernel together with its bound `κ²`,
/// `k(x, x) <= κ²` on the input domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    kappa_sq: f64,
}

impl KernelSpec {
    pub fn sobolev() -> Self {
        Self {
            family: KernelFamily::SobolevFirstOrder,
            kappa_sq: 2.0,
        }
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!(
                "gaussian bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self {
            family: KernelFamily::Gaussian { bandwidth },
            kappa_sq: 1.0,
        })
    }

    /// Linear kernel on inputs with `|x|² <= kappa_sq`.
    pub fn linear(kappa_sq: f64) -> Result<Self> {
        if !(kappa_sq > 0.0 && kappa_sq.is_finite()) {
            return Err(Error::invalid(format!(
                "kappa_sq must be positive, got {kappa_sq}"
            )));
        }
        Ok(Self {
            family: KernelFamily::Linear,
            kappa_sq,
        })
    }

    pub fn from_family(family: KernelFamily) -> Result<Self> {
        match family {
            KernelFamily::SobolevFirstOrder => Ok(Self::sobolev()),
            KernelFamily::Gaussian { bandwidth } => Self::gaussian(bandwidth),
            KernelFamily::Linear => Self::linear(1.0),
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn kappa_sq(&self) -> f64 {
        self.kappa_sq
    }

    /// Checks that `x` lies in the kernel's input domain.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        match self.family {
            KernelFamily::SobolevFirstOrder => {
                if x.len() != 1 {
                    return Err(Error::invalid(format!(
                        "sobolev kernel takes scalar inputs, got dimension {}",
                        x.len()
                    )));
                }
                if !(0.0..=1.0).contains(&x[0]) {
                    return Err(Error::invalid(format!(
                        "sobolev input {} outside [0, 1]",
                        x[0]
                    )));
                }
            }
            KernelFamily::Gaussian { .. } => {}
            KernelFamily::Linear => {
                let sq: f64 = x.iter().map(|v| v * v).sum();
                if sq > self.kappa_sq {
                    return Err(Error::invalid(format!(
                        "linear kernel input with |x|^2 = {sq} exceeds kappa_sq = {}",
                        self.kappa_sq
                    )));
                }
            }
        }
        Ok(())
    }

    /// Validates every point and the bound `k(x, x) <= κ²`.
    pub fn check_points(&self, points: &PointSet) -> Result<()> {
        for x in points.iter() {
            self.check_point(x)?;
            let diag = self.eval_unchecked(x, x);
            if diag > self.kappa_sq * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "k(x, x) = {diag} exceeds kappa_sq = {}",
                    self.kappa_sq
                )));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        if x.len() != x2.len() {
            return Err(Error::invalid(format!(
                "dimension mismatch: {} vs {}",
                x.len(),
                x2.len()
            )));
        }
        self.check_point(x)?;
        self.check_point(x2)?;
        Ok(self.eval_unchecked(x, x2))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        match self.family {
            KernelFamily::SobolevFirstOrder => 1.0 + x[0].min(x2[0]),
            KernelFamily::Gaussian { bandwidth } => {
                let sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelFamily::Linear => x.iter().zip(x2).map(|(a, b)| a * b).sum(),
        }
    }
}

fn check_compatible(spec: &KernelSpec, rows: &PointSet, cols: &PointSet) -> Result<()> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::invalid("point sets must be nonempty"));
    }
    if rows.dim() != cols.dim() {
        return Err(Error::invalid(format!(
            "point dimension mismatch: {} vs {}",
            rows.dim(),
            cols.dim()
        )));
    }
    spec.check_points(rows)?;
    if rows != cols {
        spec.check_points(cols)?;
    }
    Ok(())
}

/// Unnormalized kernel matrix `[k(rows_i, cols_j)]`, filled column by column.
pub fn kernel_matrix(spec: &KernelSpec, rows: &PointSet, cols: &PointSet) -> Result<DMatrix<f64>> {
    check_compatible(spec, rows, cols)?;
    Ok(kernel_matrix_unchecked(spec, rows, cols, 1.0))
}

pub(crate) fn kernel_matrix_unchecked(
    spec: &KernelSpec,
    rows: &PointSet,
    cols: &PointSet,
    scale: f64,
) -> DMatrix<f64> {
    let n = rows.len();
    let mut out = DMatrix::<f64>::zeros(n, cols.len());
    let fill = |(j, column): (usize, &mut [f64])| {
        let c = cols.point(j);
        for (i, entry) in column.iter_mut().enumerate() {
            *entry = scale * spec.eval_unchecked(rows.point(i), c);
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.as_mut_slice().par_chunks_mut(n).enumerate().for_each(fill);
    }
    #[cfg(not(feature = "parallel"))]
    out.as_mut_slice().chunks_mut(n).enumerate().for_each(fill);
    out
}

/// Gram matrix `K_{x x̃}` with entries `k(x_i, x̃_j) / sqrt(n ñ)`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    rows: PointSet,
    cols: PointSet,
}

/// Largest matrix the PSD check will eigendecompose.
pub const PSD_CHECK_MAX_DIM: usize = 2048;

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn rows(&self) -> &PointSet {
        &self.rows
    }

    pub fn cols(&self) -> &PointSet {
        &self.cols
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn is_square_on_same_points(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> GramMatrix {
        GramMatrix {
            entries: self.entries.transpose(),
            rows: self.cols.clone(),
            cols: self.rows.clone(),
        }
    }

    /// Verifies symmetry and positive semidefiniteness up to
    /// `min eigenvalue >= -1e-8 * max eigenvalue`.
    pub fn check_psd(&self) -> Result<()> {
        if !self.is_square_on_same_points() {
            return Err(Error::invalid("PSD check needs a Gram matrix on one point set"));
        }
        let n = self.nrows();
        if n > PSD_CHECK_MAX_DIM {
            return Err(Error::invalid(format!(
                "PSD check limited to {PSD_CHECK_MAX_DIM} points, got {n}"
            )));
        }
        if self.entries != self.entries.transpose() {
            return Err(Error::invalid("Gram matrix is not symmetric"));
        }
        let eig = crate::linalg::sym_eigen(&self.entries);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min < -1e-8 * max.max(0.0) {
            return Err(Error::invalid(format!(
                "Gram matrix not PSD: min eigenvalue {min}, max {max}"
            )));
        }
        Ok(())
    }
}

/// Normalized Gram matrix between `rows` and `cols`.
pub fn gram(spec: &KernelSpec, rows: &PointSet, cols: &PointSet) -> Result<GramMatrix> {
    check_compatible(spec, rows, cols)?;
    let scale = 1.0 / ((rows.len() as f64) * (cols.len() as f64)).sqrt();
    Ok(GramMatrix {
        entries: kernel_matrix_unchecked(spec, rows, cols, scale),
        rows: rows.clone(),
        cols: cols.clone(),
    })
}
