//! Whitened finite-dimensional problems for projected KCGM.
//!
//! With `Q` spanning the projection subspace and `R Rᵀ = (Q*Q)†`, the
//! projected iteration is equivalent to a Krylov solve on
//! `K̃ = Rᵀ Q* T_x Q R` with right-hand side `b = Rᵀ Q* S_x* ȳ`. Writing
//! `C = S_x Q R` (an `n×r` matrix) gives `K̃ = CᵀC` and `b = Cᵀ ȳ`, and
//! `C Cᵀ = S_x P S_x*` is the sample-side image of the projection.
//!
//! * sketched: `Q = S_x* Gᵀ`, so `Q*Q = G K Gᵀ` and `C = K Gᵀ R`.
//! * Nyström: `Q = S_x̃*`, so `Q*Q = K_x̃x̃` and `C = K_xx̃ R`.
//! * classic: no projection; the solve runs on `K` itself with the
//!   `K`-weighted residual norm.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, PointSet};
use crate::krylov::ResidualNorm;
use crate::linalg::{symmetrize, weighted_norm, whitening_factor};
use crate::sketch::SketchOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sketched,
    Nystrom,
    Classic,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Sketched => "sketched",
            Variant::Nystrom => "nystrom",
            Variant::Classic => "classic",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sketched" => Ok(Variant::Sketched),
            "nystrom" => Ok(Variant::Nystrom),
            "classic" => Ok(Variant::Classic),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Maps reduced coefficients `a` to a kernel expansion
/// `f(x) = scale · Σ_i c_i k(anchor_i, x)` with `c = map · a`.
#[derive(Debug, Clone)]
pub struct Lift {
    pub anchors: PointSet,
    /// `None` means the identity map.
    pub map: Option<DMatrix<f64>>,
    pub scale: f64,
}

impl Lift {
    pub fn coefficients(&self, a: &DVector<f64>) -> DVector<f64> {
        match &self.map {
            Some(m) => m * a,
            None => a.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub variant: Variant,
    pub k_tilde: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Whitening factor `R`; `None` for the classic variant.
    pub whitening: Option<DMatrix<f64>>,
    /// `C = S_x Q R`; `None` for the classic variant.
    pub span_factor: Option<DMatrix<f64>>,
    pub lift: Lift,
}

impl ReducedProblem {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn residual_norm(&self) -> ResidualNorm {
        match self.variant {
            Variant::Classic => ResidualNorm::Weighted,
            _ => ResidualNorm::Euclidean,
        }
    }

    /// Residual of Algorithm-level interest: `‖K̃a − b‖₂`, or the
    /// `K`-weighted norm for the classic variant.
    pub fn residual(&self, a: &DVector<f64>) -> f64 {
        let r = &self.k_tilde * a - &self.b;
        match self.residual_norm() {
            ResidualNorm::Euclidean => r.norm(),
            ResidualNorm::Weighted => weighted_norm(&self.k_tilde, &r),
        }
    }

    pub fn coefficients(&self, a: &DVector<f64>) -> DVector<f64> {
        self.lift.coefficients(a)
    }
}

fn finish(
    variant: Variant,
    r: DMatrix<f64>,
    c: DMatrix<f64>,
    y_bar: &DVector<f64>,
    lift: Lift,
) -> ReducedProblem {
    let k_tilde = symmetrize(&(c.transpose() * &c));
    let b = c.transpose() * y_bar;
    ReducedProblem {
        variant,
        k_tilde,
        b,
        whitening: Some(r),
        span_factor: Some(c),
        lift,
    }
}

fn check_square(k: &GramMatrix, y_bar: &DVector<f64>) -> Result<()> {
    if !k.is_square_on_same_points() {
        return Err(Error::invalid("expected the Gram matrix of the sample with itself"));
    }
    if y_bar.len() != k.nrows() {
        return Err(Error::invalid(format!(
            "response length {} does not match sample size {}",
            y_bar.len(),
            k.nrows()
        )));
    }
    Ok(())
}

/// Whitening factor `R` with `RRᵀ = (G K Gᵀ)†` and span factor `C = K Gᵀ R`.
pub fn sketched_factors(k: &DMatrix<f64>, g: &SketchOperator) -> (DMatrix<f64>, DMatrix<f64>) {
    let gk = g.apply(k);
    let compressed = symmetrize(&g.apply(&gk.transpose()));
    let r = whitening_factor(&compressed);
    let c = gk.transpose() * &r;
    (r, c)
}

/// Whitening factor `R` with `RRᵀ = K_x̃x̃†` and span factor `C = K_xx̃ R`.
pub fn nystrom_factors(k_mx: &DMatrix<f64>, k_mm: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = whitening_factor(k_mm);
    let c = k_mx.transpose() * &r;
    (r, c)
}

/// Sketched reduction: `RRᵀ = (G K Gᵀ)†`, `K̃ = Rᵀ G K² Gᵀ R`,
/// `b = Rᵀ G K ȳ`, coefficients `c = Gᵀ R a` over the full sample with
/// scale `1/√n`.
pub fn reduce_sketched(
    k: &GramMatrix,
    g: &SketchOperator,
    y_bar: &DVector<f64>,
) -> Result<ReducedProblem> {
    check_square(k, y_bar)?;
    let n = k.nrows();
    if g.n() != n {
        return Err(Error::invalid(format!(
            "sketch built for n={} applied to sample of size {n}",
            g.n()
        )));
    }
    let (r, c) = sketched_factors(k.entries(), g);
    if r.ncols() == 0 {
        return Err(Error::Degenerate("sketched Gram matrix G K Gᵀ has rank 0".into()));
    }
    let lift = Lift {
        anchors: k.rows().clone(),
        map: Some(g.apply_transpose(&r)),
        scale: 1.0 / (n as f64).sqrt(),
    };
    Ok(finish(Variant::Sketched, r, c, y_bar, lift))
}

/// Nyström reduction from `K_x̃x` (m×n) and `K_x̃x̃` (m×m):
/// `RRᵀ = K_x̃x̃†`, `K̃ = Rᵀ K_x̃x K_xx̃ R`, `b = Rᵀ K_x̃x ȳ`, coefficients
/// `c = R a` over the subsample with scale `1/√m`. Repeated anchors are
/// kept as given.
pub fn reduce_nystrom(
    k_mx: &GramMatrix,
    k_mm: &GramMatrix,
    y_bar: &DVector<f64>,
) -> Result<ReducedProblem> {
    if !k_mm.is_square_on_same_points() || k_mx.rows() != k_mm.rows() {
        return Err(Error::invalid(
            "Nyström reduction needs K_x̃x and K_x̃x̃ on the same subsample",
        ));
    }
    if y_bar.len() != k_mx.ncols() {
        return Err(Error::invalid(format!(
            "response length {} does not match sample size {}",
            y_bar.len(),
            k_mx.ncols()
        )));
    }
    let m = k_mm.nrows();
    let (r, c) = nystrom_factors(k_mx.entries(), k_mm.entries());
    if r.ncols() == 0 {
        return Err(Error::Degenerate("subsample Gram matrix has rank 0".into()));
    }
    let lift = Lift {
        anchors: k_mm.rows().clone(),
        map: Some(r.clone()),
        scale: 1.0 / (m as f64).sqrt(),
    };
    Ok(finish(Variant::Nystrom, r, c, y_bar, lift))
}

/// Unprojected problem: `K̃ = K`, `b = ȳ`, identity coefficient map.
pub fn reduce_classic(k: &GramMatrix, y_bar: &DVector<f64>) -> Result<ReducedProblem> {
    check_square(k, y_bar)?;
    Ok(ReducedProblem {
        variant: Variant::Classic,
        k_tilde: k.entries().clone(),
        b: y_bar.clone(),
        whitening: None,
        span_factor: None,
        lift: Lift {
            anchors: k.rows().clone(),
            map: None,
            scale: 1.0 / (k.nrows() as f64).sqrt(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gram, KernelSpec};
    use crate::sketch::{make_gaussian, make_identity, make_nystrom_plain, make_ros};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn sample(n: usize, seed: u64) -> (PointSet, DVector<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        (PointSet::from_scalars(xs), y / (n as f64).sqrt())
    }

    fn random_psd(dim: usize, rank: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f = DMatrix::from_fn(dim, rank, |_, _| rng.random::<f64>() - 0.5);
        &f * f.transpose()
    }

    #[test]
    fn pinv_identity_on_low_rank() {
        for seed in 0..5 {
            let m = random_psd(10, 6, seed);
            let r = whitening_factor(&m);
            assert_eq!(r.ncols(), 6);
            let p = &r * r.transpose();
            let err = (&m * &p * &m - &m).norm();
            assert!(err <= 1e-8 * m.norm(), "err {err}");
            let fixed = (&p * &m * &p - &p).norm();
            assert!(fixed <= 1e-8 * p.norm());
            // compare against an SVD-based pseudo-inverse
            let svd_pinv = m.clone().pseudo_inverse(1e-10 * m.norm()).unwrap();
            assert_abs_diff_eq!(p, svd_pinv, epsilon = 1e-6 * svd_pinv.norm());
        }
    }

    #[test]
    fn single_point_sketch_closed_form() {
        let kernel = KernelSpec::sobolev();
        let x = PointSet::from_scalars(vec![0.4]);
        let k = gram(&kernel, &x, &x).unwrap();
        let y_bar = DVector::from_vec(vec![3.0]);
        let g = make_gaussian(1, 1, 0).unwrap();
        let p = reduce_sketched(&k, &g, &y_bar).unwrap();
        assert_abs_diff_eq!(p.k_tilde[(0, 0)], 1.4, epsilon = 1e-14);
        assert_abs_diff_eq!(p.b[0].abs(), 1.4f64.sqrt() * 3.0, epsilon = 1e-13);
    }

    /// Computes ‖Âω − P S_x* ȳ‖_H for ω = S_x* u through Gram algebra, with
    /// the projection built from an SVD pseudo-inverse.
    fn h_norm_residual_sketched(
        k: &DMatrix<f64>,
        g: &DMatrix<f64>,
        u: &DVector<f64>,
        y_bar: &DVector<f64>,
    ) -> f64 {
        let gkg = g * k * g.transpose();
        let pinv = gkg.clone().pseudo_inverse(1e-10 * gkg.norm()).unwrap();
        let d = g.transpose() * pinv * g * k * (k * u - y_bar);
        d.dot(&(k * &d)).max(0.0).sqrt()
    }

    #[test]
    fn sketched_residual_equals_h_norm_residual() {
        let kernel = KernelSpec::sobolev();
        for seed in 0..4 {
            let (x, y_bar) = sample(16, seed);
            let k = gram(&kernel, &x, &x).unwrap();
            for g in [make_gaussian(5, 16, seed).unwrap(), make_ros(4, 16, seed).unwrap()] {
                let p = reduce_sketched(&k, &g, &y_bar).unwrap();
                let a = DVector::from_fn(p.dim(), |i, _| (i as f64 + 1.0).sin());
                let u = p.coefficients(&a);
                let direct = h_norm_residual_sketched(k.entries(), &g.to_dense(), &u, &y_bar);
                let reduced = p.residual(&a);
                assert!((direct - reduced).abs() <= 1e-8 * (1.0 + reduced), "{direct} vs {reduced}");
            }
        }
    }

    #[test]
    fn nystrom_residual_equals_h_norm_residual() {
        let kernel = KernelSpec::sobolev();
        for seed in 0..4 {
            let n = 20;
            let (x, y_bar) = sample(n, seed);
            let k = gram(&kernel, &x, &x).unwrap();
            let idx = make_nystrom_plain(6, n, seed).unwrap().indices().unwrap();
            let sub = x.select(&idx);
            let k_mx = gram(&kernel, &sub, &x).unwrap();
            let k_mm = gram(&kernel, &sub, &sub).unwrap();
            let p = reduce_nystrom(&k_mx, &k_mm, &y_bar).unwrap();
            assert_eq!(p.b.len(), 6);
            let a = DVector::from_fn(p.dim(), |i, _| (i as f64 * 0.3).cos());
            let w = p.coefficients(&a);
            // ω = S_x̃* w = S_x* u with u_i = sqrt(n/m) Σ_{j: idx_j = i} w_j
            let mut u = DVector::zeros(n);
            for (j, &i) in idx.iter().enumerate() {
                u[i] += (n as f64 / 6.0).sqrt() * w[j];
            }
            let kmm = k_mm.entries();
            let pinv = kmm.clone().pseudo_inverse(1e-10 * kmm.norm()).unwrap();
            let e = pinv * k_mx.entries() * (k.entries() * u - &y_bar);
            let direct = e.dot(&(kmm * &e)).max(0.0).sqrt();
            let reduced = p.residual(&a);
            assert!((direct - reduced).abs() <= 1e-8 * (1.0 + reduced), "{direct} vs {reduced}");
        }
    }

    #[test]
    fn reduced_spectrum_is_bounded_by_gram_norm() {
        let kernel = KernelSpec::sobolev();
        let (x, y_bar) = sample(64, 9);
        let k = gram(&kernel, &x, &x).unwrap();
        let k_max = crate::linalg::lambda_max(k.entries());
        for g in [make_gaussian(8, 64, 1).unwrap(), make_ros(16, 64, 2).unwrap()] {
            let p = reduce_sketched(&k, &g, &y_bar).unwrap();
            let eig = crate::linalg::sym_eigen(&p.k_tilde);
            assert!(eig.eigenvalues.min() >= -1e-12 * k_max);
            assert!(eig.eigenvalues.max() <= k_max * (1.0 + 1e-10));
            assert!(p.dim() <= g.m());
            let r = p.whitening.as_ref().unwrap();
            let compressed = g.apply(&g.apply(k.entries()).transpose());
            let rr = r * r.transpose();
            let fixed = (&rr * compressed * &rr - &rr).norm();
            assert!(fixed <= 1e-8 * rr.norm());
        }
    }

    #[test]
    fn identity_sketch_spans_full_sample() {
        let kernel = KernelSpec::sobolev();
        let (x, y_bar) = sample(12, 3);
        let k = gram(&kernel, &x, &x).unwrap();
        let p = reduce_sketched(&k, &make_identity(12).unwrap(), &y_bar).unwrap();
        assert_eq!(p.dim(), 12);
        let c = p.span_factor.as_ref().unwrap();
        assert_abs_diff_eq!(c * c.transpose(), k.entries().clone(), epsilon = 1e-10);
    }

    #[test]
    fn single_anchor_nystrom() {
        let kernel = KernelSpec::sobolev();
        let (x, y_bar) = sample(10, 1);
        let sub = x.select(&[3]);
        let k_mx = gram(&kernel, &sub, &x).unwrap();
        let k_mm = gram(&kernel, &sub, &sub).unwrap();
        let p = reduce_nystrom(&k_mx, &k_mm, &y_bar).unwrap();
        assert_eq!(p.dim(), 1);
        assert_eq!(p.lift.anchors.len(), 1);
    }

    #[test]
    fn repeated_anchors_reduce_rank() {
        let kernel = KernelSpec::sobolev();
        let (x, y_bar) = sample(10, 2);
        let sub = x.select(&[1, 4, 1, 4, 7]);
        let k_mx = gram(&kernel, &sub, &x).unwrap();
        let k_mm = gram(&kernel, &sub, &sub).unwrap();
        let p = reduce_nystrom(&k_mx, &k_mm, &y_bar).unwrap();
        assert_eq!(p.dim(), 3);
        assert_eq!(p.lift.anchors.len(), 5);
    }

    #[test]
    fn classic_passes_through() {
        let kernel = KernelSpec::sobolev();
        let (x, y_bar) = sample(8, 4);
        let k = gram(&kernel, &x, &x).unwrap();
        let p = reduce_classic(&k, &y_bar).unwrap();
        assert_eq!(&p.k_tilde, k.entries());
        assert_eq!(p.b, y_bar);
        let a = DVector::from_fn(8, |i, _| i as f64);
        assert_eq!(p.coefficients(&a), a);
        let exact = k.entries().clone().lu().solve(&y_bar).unwrap();
        assert!(p.residual(&exact) <= 1e-8);
    }

    #[test]
    fn zero_gram_is_degenerate() {
        let kernel = KernelSpec::linear(1.0).unwrap();
        let x = PointSet::from_scalars(vec![0.0, 0.0]);
        let k = gram(&kernel, &x, &x).unwrap();
        let y_bar = DVector::from_vec(vec![1.0, 2.0]);
        let g = make_identity(2).unwrap();
        assert!(matches!(reduce_sketched(&k, &g, &y_bar), Err(Error::Degenerate(_))));
    }
}
