//! The modeling view of a dataset: scaled inputs, the extended design and the response.

use nalgebra::{DMatrix, DVector};

use crate::error::{GpError, Result};

/// Scaled inputs `x` (n×m_X), extended design `f = (1, x)` and response `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub x: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Observations {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(GpError::DimensionMismatch { expected: x.nrows(), found: y.len() });
        }
        let f = extended_design(&x);
        Ok(Self { x, f, y })
    }

    /// No observations in `m_x` input dimensions.
    pub fn empty(m_x: usize) -> Self {
        Self::new(DMatrix::zeros(0, m_x), DVector::zeros(0)).expect("shapes agree")
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m_x(&self) -> usize {
        self.x.ncols()
    }

    /// Number of regression coefficients, m_X + 1.
    pub fn m(&self) -> usize {
        self.x.ncols() + 1
    }

    pub fn row(&self, j: usize) -> Vec<f64> {
        self.x.row(j).iter().copied().collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        let f = self.f.select_rows(rows);
        Self { x, f, y }
    }

    pub fn with_response(&self, y: DVector<f64>) -> Self {
        assert_eq!(y.len(), self.n());
        Self { x: self.x.clone(), f: self.f.clone(), y }
    }
}

/// `f(x)ᵀ = (1, xᵀ)`.
pub fn basis(x: &[f64]) -> DVector<f64> {
    let mut f = DVector::zeros(x.len() + 1);
    f[0] = 1.0;
    for (i, v) in x.iter().enumerate() {
        f[i + 1] = *v;
    }
    f
}

pub fn extended_design(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut f = DMatrix::from_element(n, x.ncols() + 1, 1.0);
    f.view_mut((0, 1), (n, x.ncols())).copy_from(x);
    f
}
