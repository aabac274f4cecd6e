//! Separable power-family correlation with a nugget, and the covariance
//! matrices built from it.
//!
//! A [`CovMatrix`] either holds a dense Cholesky factor or, when every
//! boolean is off, the closed form `(1+g)·I` with no factorization at all.
//! Dense factorizations are counted per thread so callers can verify that
//! the linear-model path never touches an n×n factor.

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

thread_local! {
    static DENSE_FACTORIZATIONS: Cell<u64> = const { Cell::new(0) };
    static FACTORIZATION_FLOPS: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of the per-thread dense factorization counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FactorizationCounter {
    pub count: u64,
    /// Approximate floating point work, n³/3 per factorization.
    pub flops: u64,
}

pub fn factorization_counter() -> FactorizationCounter {
    FactorizationCounter {
        count: DENSE_FACTORIZATIONS.with(Cell::get),
        flops: FACTORIZATION_FLOPS.with(Cell::get),
    }
}

pub fn reset_factorization_counter() {
    DENSE_FACTORIZATIONS.with(|c| c.set(0));
    FACTORIZATION_FLOPS.with(|c| c.set(0));
}

fn record_factorization(n: usize) {
    DENSE_FACTORIZATIONS.with(|c| c.set(c.get() + 1));
    let n = n as u64;
    FACTORIZATION_FLOPS.with(|c| c.set(c.get() + n * n * n / 3));
}

/// Everything that determines the correlation matrix K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationState {
    /// Range parameters, one per input dimension.
    pub d: Vec<f64>,
    /// Nugget.
    pub g: f64,
    /// `true` keeps the GP active in that dimension, `false` linearizes it.
    pub b: Vec<bool>,
    /// Power exponents in (0, 2].
    pub p: Vec<f64>,
}

impl CorrelationState {
    pub fn new(d: Vec<f64>, g: f64, b: Vec<bool>, p: Vec<f64>) -> Result<Self> {
        let cs = Self { d, g, b, p };
        cs.validate()?;
        Ok(cs)
    }

    /// Gaussian (p = 2) correlation with every dimension active.
    pub fn gaussian(d: Vec<f64>, g: f64) -> Result<Self> {
        let m = d.len();
        Self::new(d, g, vec![true; m], vec![2.0; m])
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// True iff every boolean is off, i.e. K = (1+g)·I.
    pub fn is_llm(&self) -> bool {
        self.b.iter().all(|&b| !b)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.d.len();
        if self.b.len() != m {
            return Err(GpError::DimensionMismatch { expected: m, found: self.b.len() });
        }
        if self.p.len() != m {
            return Err(GpError::DimensionMismatch { expected: m, found: self.p.len() });
        }
        if let Some(d) = self.d.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(GpError::InvalidParameter(format!("range parameter {d} must be positive")));
        }
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(GpError::InvalidParameter(format!("nugget {} must be positive", self.g)));
        }
        if let Some(p) = self.p.iter().find(|p| !(**p > 0.0 && **p <= 2.0)) {
            return Err(GpError::InvalidParameter(format!("power {p} must lie in (0, 2]")));
        }
        Ok(())
    }
}

/// Correlation `exp{-Σ b_i |x_ji - x_ki|^p_i / d_i} + g·δ_jk`.
///
/// `same_index` plays the role of the Kronecker delta: it is true only when
/// both arguments are the same observation, not merely equal coordinates.
/// With every boolean off this returns the raw formula value (1 off the
/// diagonal); [`build_cov`] is where the linear-model override lives.
pub fn corr_entry(xj: &[f64], xk: &[f64], same_index: bool, cs: &CorrelationState) -> Result<f64> {
    let m = cs.dim();
    if xj.len() != m {
        return Err(GpError::DimensionMismatch { expected: m, found: xj.len() });
    }
    if xk.len() != m {
        return Err(GpError::DimensionMismatch { expected: m, found: xk.len() });
    }
    let mut r = correlation(xj, xk, cs);
    if same_index {
        r += cs.g;
    }
    Ok(r)
}

fn correlation(xj: &[f64], xk: &[f64], cs: &CorrelationState) -> f64 {
    let mut s = 0.0;
    for i in 0..cs.dim() {
        if cs.b[i] {
            s += power_distance(xj[i] - xk[i], cs.p[i]) / cs.d[i];
        }
    }
    (-s).exp()
}

#[inline]
fn power_distance(delta: f64, p: f64) -> f64 {
    let a = delta.abs();
    if p == 2.0 {
        a * a
    } else {
        a.powf(p)
    }
}

/// Correlations `K*(x, x_j)` between one query and every row of `x`, without
/// nugget. Zero when every boolean is off, matching the `(1+g)·I` override.
pub fn cross_correlation(query: &[f64], x: &DMatrix<f64>, cs: &CorrelationState) -> DVector<f64> {
    let n = x.nrows();
    if cs.is_llm() {
        return DVector::zeros(n);
    }
    let mut row = vec![0.0; x.ncols()];
    DVector::from_fn(n, |j, _| {
        for (i, v) in row.iter_mut().enumerate() {
            *v = x[(j, i)];
        }
        correlation(query, &row, cs)
    })
}

/// Per-dimension matrices of `|x_ji - x_ki|^p_i`, reused across proposals
/// that change only d, g or b.
#[derive(Debug, Clone)]
pub struct DistanceCache {
    n: usize,
    p: Vec<f64>,
    /// Packed strict upper triangle per dimension.
    dims: Vec<Vec<f64>>,
}

impl DistanceCache {
    pub fn new(x: &DMatrix<f64>, p: &[f64]) -> Self {
        let n = x.nrows();
        let dims = p
            .iter()
            .enumerate()
            .map(|(i, &pi)| {
                let mut v = Vec::with_capacity(n * n.saturating_sub(1) / 2);
                for j in 0..n {
                    for k in (j + 1)..n {
                        v.push(power_distance(x[(j, i)] - x[(k, i)], pi));
                    }
                }
                v
            })
            .collect();
        Self { n, p: p.to_vec(), dims }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matches(&self, p: &[f64]) -> bool {
        self.p == p
    }
}

#[derive(Debug, Clone)]
enum CovRepr {
    Llm,
    Dense {
        k: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
        log_det: f64,
    },
}

/// Covariance matrix K together with whatever is needed to solve against it.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    n: usize,
    g: f64,
    repr: CovRepr,
}

impl CovMatrix {
    /// The linear-model covariance `(1+g)·I`; nothing is factored.
    pub fn llm(n: usize, g: f64) -> Self {
        Self { n, g, repr: CovRepr::Llm }
    }

    /// Factors an explicit symmetric matrix. `g` is recorded for reference only.
    pub fn from_dense(k: DMatrix<f64>, g: f64) -> Result<Self> {
        let n = k.nrows();
        let (chol, log_det) = factor(&k)?;
        Ok(Self { n, g, repr: CovRepr::Dense { k, chol, log_det } })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nugget(&self) -> f64 {
        self.g
    }

    pub fn is_llm(&self) -> bool {
        matches!(self.repr, CovRepr::Llm)
    }

    pub fn log_det(&self) -> f64 {
        match &self.repr {
            CovRepr::Llm => self.n as f64 * (1.0 + self.g).ln(),
            CovRepr::Dense { log_det, .. } => *log_det,
        }
    }

    /// Materializes K (allocates n×n for the linear-model case).
    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.repr {
            CovRepr::Llm => DMatrix::identity(self.n, self.n) * (1.0 + self.g),
            CovRepr::Dense { k, .. } => k.clone(),
        }
    }

    /// Lower Cholesky factor, `None` for the linear-model case.
    pub fn cholesky_l(&self) -> Option<DMatrix<f64>> {
        match &self.repr {
            CovRepr::Llm => None,
            CovRepr::Dense { chol, .. } => Some(chol.l()),
        }
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        solve_with_cov(self, rhs)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            CovRepr::Llm => rhs / (1.0 + self.g),
            CovRepr::Dense { chol, .. } => chol.solve(rhs),
        }
    }

    /// Draws `L z` with z standard normal, i.e. a N(0, K) vector given the normals.
    pub fn correlate(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            CovRepr::Llm => z * (1.0 + self.g).sqrt(),
            CovRepr::Dense { chol, .. } => chol.l_dirty().lower_triangle() * z,
        }
    }
}

fn factor(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    record_factorization(n);
    let max_diag = (0..n).map(|i| k[(i, i)]).fold(0.0_f64, f64::max);
    let chol = Cholesky::new(k.clone()).ok_or(GpError::SingularCovariance { n })?;
    // Tiny positive pivots are as unusable as negative ones.
    let tol = n as f64 * f64::EPSILON * max_diag;
    let l = chol.l_dirty();
    let mut log_det = 0.0;
    for i in 0..n {
        let piv = l[(i, i)];
        if !(piv * piv > tol) || !piv.is_finite() {
            return Err(GpError::SingularCovariance { n });
        }
        log_det += 2.0 * piv.ln();
    }
    Ok((chol, log_det))
}

/// Builds K for the rows of `x`. All-zero booleans return `(1+g)·I` without
/// forming or factoring a dense matrix.
pub fn build_cov(x: &DMatrix<f64>, cs: &CorrelationState) -> Result<CovMatrix> {
    cs.validate()?;
    if x.ncols() != cs.dim() {
        return Err(GpError::DimensionMismatch { expected: cs.dim(), found: x.ncols() });
    }
    let n = x.nrows();
    if cs.is_llm() {
        return Ok(CovMatrix::llm(n, cs.g));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|j| x.row(j).iter().copied().collect()).collect();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = 1.0 + cs.g;
        for l in (j + 1)..n {
            let r = correlation(&rows[j], &rows[l], cs);
            k[(j, l)] = r;
            k[(l, j)] = r;
        }
    }
    CovMatrix::from_dense(k, cs.g)
}

/// Same as [`build_cov`] but reads distances from a precomputed cache.
pub fn build_cov_cached(cache: &DistanceCache, cs: &CorrelationState) -> Result<CovMatrix> {
    cs.validate()?;
    if cache.dims.len() != cs.dim() {
        return Err(GpError::DimensionMismatch { expected: cs.dim(), found: cache.dims.len() });
    }
    if !cache.matches(&cs.p) {
        return Err(GpError::InvalidParameter("distance cache built for different powers".into()));
    }
    let n = cache.n;
    if cs.is_llm() {
        return Ok(CovMatrix::llm(n, cs.g));
    }
    let active: Vec<(&Vec<f64>, f64)> = cache
        .dims
        .iter()
        .zip(&cs.d)
        .zip(&cs.b)
        .filter(|(_, &b)| b)
        .map(|((v, &d), _)| (v, 1.0 / d))
        .collect();
    let mut k = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        k[(j, j)] = 1.0 + cs.g;
        for l in (j + 1)..n {
            let s: f64 = active.iter().map(|(v, inv_d)| v[idx] * inv_d).sum();
            let r = (-s).exp();
            k[(j, l)] = r;
            k[(l, j)] = r;
            idx += 1;
        }
    }
    CovMatrix::from_dense(k, cs.g)
}

/// `K⁻¹·rhs`; the linear-model case divides by 1+g.
pub fn solve_with_cov(cm: &CovMatrix, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    match &cm.repr {
        CovRepr::Llm => rhs / (1.0 + cm.g),
        CovRepr::Dense { chol, .. } => chol.solve(rhs),
    }
}
