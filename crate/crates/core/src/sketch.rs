//! Random projection operators.
//!
//! A [`SketchOperator`] is an `m×n` matrix `G` that compresses a sample of
//! size `n`. Matrix sketches (Gaussian, Rademacher, ROS) are scaled so that
//! `E‖Ga‖² = ‖a‖²`. Subsampling operators are sparse: each row is a scaled
//! standard basis vector, stored as an index list with weights.
//!
//! Indices are zero-based throughout.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchKind {
    Gaussian,
    Rademacher,
    /// Randomized orthogonal system: subsampled Walsh–Hadamard with random signs.
    Ros,
    NystromPlain,
    NystromAls,
    Identity,
}

impl SketchKind {
    pub fn name(&self) -> &'static str {
        match self {
            SketchKind::Gaussian => "gaussian",
            SketchKind::Rademacher => "rademacher",
            SketchKind::Ros => "ros",
            SketchKind::NystromPlain => "nystrom_plain",
            SketchKind::NystromAls => "nystrom_als",
            SketchKind::Identity => "identity",
        }
    }

    pub fn is_subsampling(&self) -> bool {
        matches!(self, SketchKind::NystromPlain | SketchKind::NystromAls)
    }
}

impl std::fmt::Display for SketchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SketchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian" => SketchKind::Gaussian,
            "rademacher" => SketchKind::Rademacher,
            "ros" => SketchKind::Ros,
            "nystrom_plain" | "nystrom" => SketchKind::NystromPlain,
            "nystrom_als" | "als" => SketchKind::NystromAls,
            "identity" => SketchKind::Identity,
            other => return Err(Error::Config(format!("unknown sketch kind `{other}`"))),
        })
    }
}

/// Sketch parameters as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchParams {
    pub kind: SketchKind,
    /// Sketch dimension; `None` means "use the schedule preset".
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Ridge parameter for leverage scores (ALS only).
    #[serde(default = "default_als_lambda")]
    pub lambda: f64,
    /// Leverage-score approximation factor `L >= 1` (ALS only).
    #[serde(default = "default_als_factor", rename = "L")]
    pub l_factor: f64,
}

fn default_als_lambda() -> f64 {
    1e-3
}

fn default_als_factor() -> f64 {
    1.0
}

impl SketchParams {
    pub fn new(kind: SketchKind, m: usize, seed: u64) -> Self {
        Self {
            kind,
            m: Some(m),
            seed,
            lambda: default_als_lambda(),
            l_factor: default_als_factor(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Realization {
    Dense(DMatrix<f64>),
    /// `G = sqrt(n/m) · S · H · D`; `signs` is the diagonal of `D`, `rows` the
    /// rows of the orthonormal Hadamard matrix `H` kept by `S`.
    Ros { signs: Vec<f64>, rows: Vec<usize> },
    /// Row `j` of `G` is `weights[j] · e_{indices[j]}ᵀ`.
    Subsample { indices: Vec<usize>, weights: Vec<f64> },
    Identity,
}

#[derive(Debug, Clone)]
pub struct SketchOperator {
    kind: SketchKind,
    m: usize,
    n: usize,
    seed: u64,
    realization: Realization,
    probabilities: Option<Vec<f64>>,
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::invalid(format!("sketch needs m, n >= 1 (m={m}, n={n})")));
    }
    if m > n {
        return Err(Error::invalid(format!(
            "sketch dimension m={m} exceeds sample size n={n}"
        )));
    }
    Ok(())
}

pub fn make_gaussian(m: usize, n: usize, seed: u64) -> Result<SketchOperator> {
    check_dims(m, n)?;
    let mut rng = stream(seed, StreamTag::Gaussian, 0);
    let scale = 1.0 / (m as f64).sqrt();
    let g = DMatrix::from_fn(m, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    Ok(SketchOperator::new(SketchKind::Gaussian, m, n, seed, Realization::Dense(g)))
}

pub fn make_rademacher(m: usize, n: usize, seed: u64) -> Result<SketchOperator> {
    check_dims(m, n)?;
    let mut rng = stream(seed, StreamTag::Rademacher, 0);
    let scale = 1.0 / (m as f64).sqrt();
    let g = DMatrix::from_fn(m, n, |_, _| if rng.random::<bool>() { scale } else { -scale });
    Ok(SketchOperator::new(SketchKind::Rademacher, m, n, seed, Realization::Dense(g)))
}

/// Randomized Hadamard sketch. `n` must be a power of two; there is no
/// zero-padding because padding would change the `1/√n` Gram normalization.
pub fn make_ros(m: usize, n: usize, seed: u64) -> Result<SketchOperator> {
    check_dims(m, n)?;
    if !n.is_power_of_two() {
        return Err(Error::invalid(format!(
            "ROS sketch needs n to be a power of two, got {n}"
        )));
    }
    let mut sign_rng = stream(seed, StreamTag::RosSigns, 0);
    let signs = (0..n)
        .map(|_| if sign_rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let mut row_rng = stream(seed, StreamTag::RosRows, 0);
    let rows = rand::seq::index::sample(&mut row_rng, n, m).into_vec();
    Ok(SketchOperator::new(SketchKind::Ros, m, n, seed, Realization::Ros { signs, rows }))
}

/// Uniform subsample of `m` distinct indices.
pub fn make_nystrom_plain(m: usize, n: usize, seed: u64) -> Result<SketchOperator> {
    check_dims(m, n)?;
    let mut rng = stream(seed, StreamTag::NystromPlain, 0);
    let indices = rand::seq::index::sample(&mut rng, n, m).into_vec();
    let w = (n as f64 / m as f64).sqrt();
    let weights = vec![w; m];
    let mut op = SketchOperator::new(
        SketchKind::NystromPlain,
        m,
        n,
        seed,
        Realization::Subsample { indices, weights },
    );
    op.probabilities = Some(vec![1.0 / n as f64; n]);
    Ok(op)
}

pub fn make_identity(n: usize) -> Result<SketchOperator> {
    check_dims(n, n)?;
    Ok(SketchOperator::new(SketchKind::Identity, n, n, 0, Realization::Identity))
}

/// Ridge leverage scores `l_i(λ) = (K (K + λI)^{-1})_ii`.
#[derive(Debug, Clone)]
pub struct LeverageScores {
    pub lambda: f64,
    pub scores: Vec<f64>,
    pub approximation_factor: f64,
}

impl LeverageScores {
    pub fn sum(&self) -> f64 {
        self.scores.iter().sum()
    }
}

pub fn leverage_scores(k: &DMatrix<f64>, lambda: f64) -> Result<LeverageScores> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if k.nrows() != k.ncols() || k.is_empty() {
        return Err(Error::invalid("leverage scores need a nonempty square matrix"));
    }
    let eig = crate::linalg::sym_eigen(k);
    let n = k.nrows();
    let filter: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&s| {
            let s = s.max(0.0);
            s / (s + lambda)
        })
        .collect();
    let scores = (0..n)
        .map(|i| {
            (0..n)
                .map(|c| {
                    let v = eig.eigenvectors[(i, c)];
                    v * v * filter[c]
                })
                .sum()
        })
        .collect();
    Ok(LeverageScores {
        lambda,
        scores,
        approximation_factor: 1.0,
    })
}

/// Approximate-leverage-score subsampling: `m` i.i.d. indices with
/// `q_i ∝ l̂_i(λ)` and row weights `1/√(m q_i)`, so that `E[GᵀG] = I`.
///
/// With `L > 1` the exact scores are perturbed by independent log-uniform
/// factors in `[1/L, L]`, which stays within the admissible band
/// `l_i / L <= l̂_i <= L l_i`.
pub fn make_nystrom_als(
    k: &DMatrix<f64>,
    m: usize,
    lambda: f64,
    l_factor: f64,
    seed: u64,
) -> Result<SketchOperator> {
    if !(l_factor >= 1.0 && l_factor.is_finite()) {
        return Err(Error::invalid(format!("L must be >= 1, got {l_factor}")));
    }
    if m == 0 {
        return Err(Error::invalid("sketch needs m >= 1"));
    }
    let mut lev = leverage_scores(k, lambda)?;
    let n = lev.scores.len();
    if l_factor > 1.0 {
        let mut rng = stream(seed, StreamTag::AlsPerturbation, 0);
        let span = l_factor.ln();
        for s in lev.scores.iter_mut() {
            *s *= rng.random_range(-span..=span).exp();
        }
        lev.approximation_factor = l_factor;
    }
    let total = lev.sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all leverage scores vanish".into()));
    }
    let q: Vec<f64> = lev.scores.iter().map(|s| s / total).collect();
    let dist = WeightedIndex::new(&q)
        .map_err(|e| Error::Degenerate(format!("leverage distribution: {e}")))?;
    let mut rng = stream(seed, StreamTag::NystromAls, 0);
    let indices: Vec<usize> = (0..m).map(|_| dist.sample(&mut rng)).collect();
    let weights = indices
        .iter()
        .map(|&i| 1.0 / ((m as f64) * q[i]).sqrt())
        .collect();
    let mut op = SketchOperator::new(
        SketchKind::NystromAls,
        m,
        n,
        seed,
        Realization::Subsample { indices, weights },
    );
    op.probabilities = Some(q);
    Ok(op)
}

/// Builds the operator described by `params` for a sample of size `n`.
/// `gram` is required for ALS subsampling.
pub fn build(params: &SketchParams, m: usize, n: usize, gram: Option<&DMatrix<f64>>) -> Result<SketchOperator> {
    match params.kind {
        SketchKind::Gaussian => make_gaussian(m, n, params.seed),
        SketchKind::Rademacher => make_rademacher(m, n, params.seed),
        SketchKind::Ros => make_ros(m, n, params.seed),
        SketchKind::NystromPlain => make_nystrom_plain(m, n, params.seed),
        SketchKind::NystromAls => {
            let k = gram.ok_or_else(|| Error::invalid("ALS subsampling needs the Gram matrix"))?;
            make_nystrom_als(k, m, params.lambda, params.l_factor, params.seed)
        }
        SketchKind::Identity => make_identity(n),
    }
}

/// In-place unnormalized Walsh–Hadamard transform (Sylvester ordering).
/// Dividing the result by `√len` gives the orthonormal transform.
pub fn fwht(data: &mut [f64]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

impl SketchOperator {
    fn new(kind: SketchKind, m: usize, n: usize, seed: u64, realization: Realization) -> Self {
        Self {
            kind,
            m,
            n,
            seed,
            realization,
            probabilities: None,
        }
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn realization(&self) -> &Realization {
        &self.realization
    }

    /// Sampling distribution over the full sample, for subsampling kinds.
    pub fn probabilities(&self) -> Option<&[f64]> {
        self.probabilities.as_deref()
    }

    /// Selected sample indices for subsampling operators; `0..n` for the
    /// identity.
    pub fn indices(&self) -> Option<Vec<usize>> {
        match &self.realization {
            Realization::Subsample { indices, .. } => Some(indices.clone()),
            Realization::Identity => Some((0..self.n).collect()),
            _ => None,
        }
    }

    /// `G · A` for `A` with `n` rows.
    pub fn apply(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(a.nrows(), self.n, "sketch applied to matrix with wrong row count");
        match &self.realization {
            Realization::Dense(g) => g * a,
            Realization::Identity => a.clone(),
            Realization::Subsample { indices, weights } => {
                DMatrix::from_fn(self.m, a.ncols(), |i, j| weights[i] * a[(indices[i], j)])
            }
            Realization::Ros { signs, rows } => {
                let scale = 1.0 / (self.m as f64).sqrt();
                let mut out = DMatrix::zeros(self.m, a.ncols());
                let mut buf = vec![0.0; self.n];
                for j in 0..a.ncols() {
                    for (b, (x, s)) in buf.iter_mut().zip(a.column(j).iter().zip(signs)) {
                        *b = x * s;
                    }
                    fwht(&mut buf);
                    // sqrt(n/m) * (1/sqrt(n)) = 1/sqrt(m)
                    for (i, &r) in rows.iter().enumerate() {
                        out[(i, j)] = scale * buf[r];
                    }
                }
                out
            }
        }
    }

    /// `Gᵀ · B` for `B` with `m` rows.
    pub fn apply_transpose(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.m, "sketch transpose applied to matrix with wrong row count");
        match &self.realization {
            Realization::Dense(g) => g.transpose() * b,
            Realization::Identity => b.clone(),
            Realization::Subsample { indices, weights } => {
                let mut out = DMatrix::zeros(self.n, b.ncols());
                for (i, (&idx, &w)) in indices.iter().zip(weights).enumerate() {
                    for j in 0..b.ncols() {
                        out[(idx, j)] += w * b[(i, j)];
                    }
                }
                out
            }
            Realization::Ros { signs, rows } => {
                let scale = 1.0 / (self.m as f64).sqrt();
                let mut out = DMatrix::zeros(self.n, b.ncols());
                let mut buf = vec![0.0; self.n];
                for j in 0..b.ncols() {
                    buf.iter_mut().for_each(|v| *v = 0.0);
                    for (i, &r) in rows.iter().enumerate() {
                        buf[r] = b[(i, j)];
                    }
                    // Sylvester Hadamard matrices are symmetric.
                    fwht(&mut buf);
                    for (k, s) in signs.iter().enumerate() {
                        out[(k, j)] = scale * s * buf[k];
                    }
                }
                out
            }
        }
    }

    pub fn apply_vec(&self, a: &DVector<f64>) -> DVector<f64> {
        let col = DMatrix::from_column_slice(a.len(), 1, a.as_slice());
        DVector::from_column_slice(self.apply(&col).as_slice())
    }

    /// Materializes `G` as a dense `m×n` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.realization {
            Realization::Dense(g) => g.clone(),
            _ => self.apply(&DMatrix::identity(self.n, self.n)),
        }
    }
}
