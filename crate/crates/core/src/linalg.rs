//! Small (m×m) symmetric positive-definite helpers. These never touch the
//! dense n×n factorization counter.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{GpError, Result};

#[derive(Debug, Clone)]
pub struct SmallSpd {
    chol: Cholesky<f64, Dyn>,
}

impl SmallSpd {
    pub fn new(a: &DMatrix<f64>, what: &'static str) -> Result<Self> {
        let sym = symmetrize(a);
        let chol = Cholesky::new(sym).ok_or(GpError::NotPositiveDefinite(what))?;
        Ok(Self { chol })
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L⁻ᵀ z`: turns standard normals into a draw with covariance A⁻¹.
    pub fn inverse_correlate(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l();
        l.transpose()
            .solve_upper_triangular(z)
            .expect("cholesky factor has a positive diagonal")
    }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn spd_inverse(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(SmallSpd::new(a, what)?.inverse())
}

/// `vᵀ A v`.
pub fn quad_form(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(a * v))
}
