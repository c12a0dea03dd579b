//! Cholesky factorisation of symmetric positive definite matrices.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::{MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub struct SpdFactor {
    llt: Llt<f64>,
    dim: usize,
}

impl SpdFactor {
    /// Factors `a`, reading only its lower triangle.
    pub fn new(a: &DMatrix<f64>, what: &str) -> Result<Self> {
        let dim = a.nrows();
        if a.ncols() != dim {
            return Err(Error::Dimension(format!("{what} is {}×{}, not square", dim, a.ncols())));
        }
        let view = MatRef::from_column_major_slice(a.as_slice(), dim, dim);
        let llt = view.llt(Side::Lower).map_err(|_| Error::LinearSolve(format!("{what} is not positive definite")))?;
        Ok(SpdFactor { llt, dim })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let rhs = MatRef::from_column_major_slice(b.as_slice(), self.dim, 1);
        let x = self.llt.solve(rhs);
        DVector::from_fn(self.dim, |i, _| x[(i, 0)])
    }

    /// The full symmetric inverse.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.llt.inverse();
        let mut out = DMatrix::from_fn(self.dim, self.dim, |i, j| inv[(i, j)]);
        out.fill_upper_triangle_with_lower_triangle();
        out
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..self.dim).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// log|A| of a symmetric positive definite matrix.
pub fn log_det_spd(a: &DMatrix<f64>) -> Result<f64> {
    SpdFactor::new(a, "covariance")
        .map(|f| f.log_det())
        .map_err(|_| Error::domain("log_det", "matrix is not positive definite"))
}
