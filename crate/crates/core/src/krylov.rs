//! Residual minimization over Krylov subspaces `K_t(A, b)`.
//!
//! The basis is built by Lanczos with full reorthogonalization (two
//! Gram–Schmidt passes per step), and every iterate comes from a dense
//! least-squares solve. With `A V_t = V_{t+1} H_t`, the Euclidean solve is
//! `min ‖H_t y − V_{t+1}ᵀ b‖`. The `A`-weighted solve is
//! `min ‖A^{1/2} (A V_t y − b)‖` in the full space, using the same square
//! root that reports the residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{sqrt_psd, sym_eigen};

/// A new basis direction shorter than this fraction of `‖A‖_F` means the
/// Krylov space has stopped growing.
pub const STAGNATION_TOL: f64 = 1e-12;

/// Relative asymmetry tolerated in the input matrix.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualNorm {
    /// `‖A a − b‖₂`
    Euclidean,
    /// `sqrt((A a − b)ᵀ A (A a − b))`
    Weighted,
}

impl ResidualNorm {
    /// The weighted norm is evaluated as `‖A^{1/2} r‖`; forming `rᵀ A r`
    /// would put a `√ε` floor under residuals that are exactly zero.
    pub fn eval(&self, a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.evaluator(a).eval(a, x, b)
    }

    fn evaluator(&self, a: &DMatrix<f64>) -> Evaluator {
        match self {
            ResidualNorm::Euclidean => Evaluator(None),
            ResidualNorm::Weighted => Evaluator(Some(sqrt_psd(a))),
        }
    }
}

/// Residual norm with the square root of `A` computed once.
struct Evaluator(Option<DMatrix<f64>>);

impl Evaluator {
    fn eval(&self, a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let r = a * x - b;
        match &self.0 {
            None => r.norm(),
            Some(root) => (root * r).norm(),
        }
    }
}

/// Orthonormal Krylov basis with the images `A v_j` of its vectors.
#[derive(Debug, Clone)]
pub struct KrylovBasis {
    vectors: Vec<DVector<f64>>,
    images: Vec<DVector<f64>>,
    /// `grew[j]` is false when step `j + 1` failed to add a direction.
    grew: Vec<bool>,
    /// Frobenius norm of `A`; new directions shorter than
    /// `STAGNATION_TOL · scale` are round-off.
    scale: f64,
}

impl KrylovBasis {
    fn start(a: &DMatrix<f64>, b: &DVector<f64>, b_norm: f64) -> Self {
        let v = b / b_norm;
        let w = a * &v;
        Self {
            vectors: vec![v],
            images: vec![w],
            grew: Vec::new(),
            scale: a.norm(),
        }
    }

    /// Tries to append `v_{k+1}` from `A v_k`; returns false on stagnation.
    fn expand(&mut self, a: &DMatrix<f64>) -> bool {
        let dim = a.nrows();
        let last = self.images.last().expect("basis is never empty");
        let mut u = last.clone();
        for _ in 0..2 {
            for v in &self.vectors {
                let c = v.dot(&u);
                u.axpy(-c, v, 1.0);
            }
        }
        let beta = u.norm();
        let grew = self.vectors.len() < dim && beta > STAGNATION_TOL * self.scale && beta > 0.0;
        if grew {
            let v = u / beta;
            self.images.push(a * &v);
            self.vectors.push(v);
        }
        self.grew.push(grew);
        grew
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.vectors)
    }

    pub fn grew(&self) -> &[bool] {
        &self.grew
    }

    /// `V_lᵀ A V_k` for the first `l` and `k` basis vectors.
    fn projected(&self, l: usize, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(l, k, |i, j| self.vectors[i].dot(&self.images[j]))
    }
}

/// Iterates and residuals of a Krylov solve. `iterates[t - 1]` is `a_t`.
#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub iterates: Vec<DVector<f64>>,
    pub residuals: Vec<f64>,
    /// Dimension `m₀` of the final Krylov space, when it stopped growing
    /// before `t_max`.
    pub stagnated_at: Option<usize>,
    /// `b = 0`: the zero vector is optimal and the trace is empty.
    pub trivial: bool,
    pub norm: ResidualNorm,
    pub b_norm: f64,
}

impl SolveTrace {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    /// `a_t` for `t >= 1`.
    pub fn iterate(&self, t: usize) -> Option<&DVector<f64>> {
        t.checked_sub(1).and_then(|i| self.iterates.get(i))
    }

    pub fn residual(&self, t: usize) -> Option<f64> {
        t.checked_sub(1).and_then(|i| self.residuals.get(i).copied())
    }
}

fn validate(a: &DMatrix<f64>, b: &DVector<f64>, t_max: usize) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid(format!("matrix is {}×{}, not square", a.nrows(), a.ncols())));
    }
    if a.nrows() != b.len() {
        return Err(Error::invalid(format!(
            "right-hand side has length {}, matrix has dimension {}",
            b.len(),
            a.nrows()
        )));
    }
    if t_max == 0 {
        return Err(Error::invalid("t_max must be at least 1"));
    }
    let scale = a.amax();
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::invalid(format!("matrix is not symmetric (asymmetry {asym})")));
    }
    Ok(())
}

/// Dense least squares `min ‖M y − c‖` through the SVD with a relative
/// singular-value cutoff.
fn least_squares(m: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return DVector::zeros(m.ncols());
    }
    svd.solve(c, 1e-13 * smax).expect("SVD was computed with U and V")
}

/// Solves `min ‖·‖` over `K_t(A, b)` for `t = 1..=t_max`.
pub fn krylov_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    t_max: usize,
    norm: ResidualNorm,
) -> Result<SolveTrace> {
    validate(a, b, t_max)?;
    let b_norm = b.norm();
    let mut trace = SolveTrace {
        iterates: Vec::with_capacity(t_max),
        residuals: Vec::with_capacity(t_max),
        stagnated_at: None,
        trivial: false,
        norm,
        b_norm,
    };
    if b_norm == 0.0 {
        trace.trivial = true;
        return Ok(trace);
    }
    let evaluator = norm.evaluator(a);
    // Weighted solves minimize ‖A^{1/2}(A V y − b)‖ with the same square
    // root used to report residuals, so that the objective and the reported
    // value agree and nested spaces give non-increasing residuals.
    let weighted_rhs = evaluator.0.as_ref().map(|root| root * b);
    let mut weighted_images: Vec<DVector<f64>> = Vec::new();
    let mut basis = KrylovBasis::start(a, b, b_norm);
    for t in 1..=t_max {
        if let Some(m0) = trace.stagnated_at {
            debug_assert!(t > m0);
            let last = trace.iterates[m0 - 1].clone();
            let res = trace.residuals[m0 - 1];
            trace.iterates.push(last);
            trace.residuals.push(res);
            continue;
        }
        if !basis.expand(a) {
            trace.stagnated_at = Some(t);
        }
        // K_t has dimension t; the residual lives in span V_{t+1} (or V_t
        // once the space is invariant).
        let k = t;
        let y = match (&evaluator.0, &weighted_rhs) {
            (Some(root), Some(rhs)) => {
                while weighted_images.len() < k {
                    weighted_images.push(root * &basis.images[weighted_images.len()]);
                }
                least_squares(&DMatrix::from_columns(&weighted_images[..k]), rhs)
            }
            _ => {
                let l = basis.len().min(t + 1);
                let c = DVector::from_fn(l, |i, _| basis.vectors[i].dot(b));
                least_squares(&basis.projected(l, k), &c)
            }
        };
        let mut x = DVector::zeros(a.nrows());
        for (j, yj) in y.iter().enumerate() {
            x.axpy(*yj, &basis.vectors[j], 1.0);
        }
        trace.residuals.push(evaluator.eval(a, &x, b));
        trace.iterates.push(x);
    }
    Ok(trace)
}

/// `a_t = argmin_{a ∈ K_t(A, b)} ‖A a − b‖₂`.
pub fn krylov_minres(a: &DMatrix<f64>, b: &DVector<f64>, t_max: usize) -> Result<SolveTrace> {
    krylov_solve(a, b, t_max, ResidualNorm::Euclidean)
}

/// `a_t = argmin_{a ∈ K_t(A, b)} ‖A a − b‖_A`.
pub fn krylov_weighted(a: &DMatrix<f64>, b: &DVector<f64>, t_max: usize) -> Result<SolveTrace> {
    krylov_solve(a, b, t_max, ResidualNorm::Weighted)
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub coefficients: DVector<f64>,
    pub residual: f64,
    /// Dimension of the surviving subspace.
    pub dim: usize,
    pub stagnated: bool,
}

/// Reference solution for one `t`, independent of the Lanczos recurrence:
/// grows an orthonormal basis of `K_t(A, b)` by multiplying the newest
/// vector by `A` and orthogonalizing against all previous ones (two modified
/// Gram–Schmidt passes), then solves the least-squares problem densely in
/// the full space against `A Q` (weighted by `A^{1/2}` from a full
/// eigendecomposition).
pub fn brute_force_polynomial_oracle(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    t: usize,
    norm: ResidualNorm,
) -> Result<OracleSolution> {
    validate(a, b, t)?;
    let n = a.nrows();
    if b.norm() == 0.0 {
        return Ok(OracleSolution {
            coefficients: DVector::zeros(n),
            residual: 0.0,
            dim: 0,
            stagnated: true,
        });
    }
    let scale = a.norm();
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(t);
    let mut stagnated = false;
    for _ in 0..t {
        // Absolute lengths: a direction shorter than 1e-13·‖A‖ is round-off.
        let (mut u, floor) = match q.last() {
            None => (b / b.norm(), 0.0),
            Some(last) => (a * last, 1e-13 * scale),
        };
        for _ in 0..2 {
            for v in &q {
                let c = v.dot(&u);
                u.axpy(-c, v, 1.0);
            }
        }
        let un = u.norm();
        if q.len() >= n || un <= floor || un == 0.0 {
            stagnated = true;
            break;
        }
        q.push(u / un);
    }
    let q = DMatrix::from_columns(&q);
    let aq = a * &q;
    let y = match norm {
        ResidualNorm::Euclidean => least_squares(&aq, b),
        ResidualNorm::Weighted => {
            let eig = sym_eigen(a);
            let floor = n as f64 * f64::EPSILON * eig.eigenvalues.amax();
            let roots = eig.eigenvalues.map(|v| if v > floor { v.sqrt() } else { 0.0 });
            let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
            least_squares(&(&root * &aq), &(&root * b))
        }
    };
    let coefficients = &q * y;
    Ok(OracleSolution {
        residual: norm.eval(a, &coefficients, b),
        coefficients,
        dim: q.ncols(),
        stagnated,
    })
}
