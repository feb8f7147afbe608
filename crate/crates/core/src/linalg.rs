//! Small dense helpers on top of nalgebra's symmetric eigensolver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues below this fraction of the largest are treated as zero when
/// forming pseudo-inverses.
pub const RANK_TOL: f64 = 1e-10;

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn sym_eigen(a: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(a))
}

/// Largest eigenvalue of a symmetric matrix; `0` for an empty matrix.
pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    sym_eigen(a).eigenvalues.max()
}

/// Returns `R` (m×r) with `R Rᵀ = M†` and columns spanning `range(M)`.
///
/// Built from the eigendecomposition `M = V Λ Vᵀ` as `R = V_r Λ_r^{-1/2}`,
/// keeping eigenvalues above `RANK_TOL * λ_max`. Columns are ordered by
/// decreasing eigenvalue. A zero matrix yields an `m×0` factor.
pub fn whitening_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = m.nrows();
    if dim == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = sym_eigen(m);
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return DMatrix::zeros(dim, 0);
    }
    let cutoff = RANK_TOL * max;
    let mut keep: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut r = DMatrix::zeros(dim, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let s = 1.0 / eig.eigenvalues[i].sqrt();
        r.set_column(col, &(eig.eigenvectors.column(i) * s));
    }
    r
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn pinv_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let r = whitening_factor(m);
    &r * r.transpose()
}

/// Principal square root of a symmetric PSD matrix. Eigenvalues at
/// round-off level (`<= dim · ε · λ_max`) are set to zero so that null
/// directions stay exactly null instead of picking up `√ε` weights.
pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_eigen(a);
    let floor = a.nrows() as f64 * f64::EPSILON * eig.eigenvalues.amax();
    let roots = eig.eigenvalues.map(|v| if v > floor { v.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `sqrt(vᵀ A v)`, clipped at zero.
pub fn weighted_norm(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(a * v)).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn whitening_of_rank_one_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0]));
        let r = whitening_factor(&m);
        assert_eq!(r.shape(), (2, 1));
        assert_abs_diff_eq!(r[(0, 0)].abs(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(1, 0)], 0.0, epsilon = 1e-15);
        let p = &r * r.transpose();
        assert_abs_diff_eq!(p[(0, 0)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn whitening_of_identity() {
        let m = DMatrix::<f64>::identity(5, 5);
        let r = whitening_factor(&m);
        assert_abs_diff_eq!(&r * r.transpose(), m, epsilon = 1e-14);
    }

    #[test]
    fn whitening_of_zero_is_empty() {
        let r = whitening_factor(&DMatrix::zeros(3, 3));
        assert_eq!(r.shape(), (3, 0));
    }

    #[test]
    fn sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = sqrt_psd(&a);
        assert_abs_diff_eq!(&s * &s, a, epsilon = 1e-12);
    }
}
