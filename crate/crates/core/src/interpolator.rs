//! Few-shot estimators induced by an eigen-weighting matrix `Lambda` (d x R).
//!
//! The weighted minimum-norm interpolator is `beta = Lambda (X Lambda)^+ y`,
//! i.e. the interpolating solution with the smallest `||alpha||` where
//! `beta = Lambda alpha`. Its ridge counterpart penalizes
//! `beta^T (Lambda Lambda^T)^+ beta` and is solved in `alpha` coordinates, which
//! coincide with that penalty on `range(Lambda)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{validation, Result};
use crate::linalg::min_norm_solve;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenWeighting {
    lambda: DMatrix<f64>,
}

impl EigenWeighting {
    pub fn new(lambda: DMatrix<f64>) -> Result<Self> {
        if lambda.ncols() == 0 || lambda.nrows() == 0 {
            return validation("eigen-weighting must be d x R with R >= 1");
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return validation("eigen-weighting has non-finite entries");
        }
        if lambda.iter().all(|v| *v == 0.0) {
            return validation("eigen-weighting is identically zero");
        }
        Ok(Self { lambda })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity weighting")
    }

    pub fn diagonal(weights: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(weights)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn d(&self) -> usize {
        self.lambda.nrows()
    }

    /// Representation dimension `R`.
    pub fn rank_dim(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.lambda * c)
    }
}

fn check_shapes(x: &DMatrix<f64>, y: &DVector<f64>, w: &EigenWeighting) -> Result<()> {
    if x.nrows() != y.len() {
        return validation(format!("X has {} rows but y has length {}", x.nrows(), y.len()));
    }
    if x.ncols() != w.d() {
        return validation(format!("X has {} columns but Lambda has {} rows", x.ncols(), w.d()));
    }
    Ok(())
}

/// `Lambda (X Lambda)^+ y`.
pub fn fit_weighted_min_norm(x: &DMatrix<f64>, y: &DVector<f64>, w: &EigenWeighting) -> Result<DVector<f64>> {
    check_shapes(x, y, w)?;
    let xl = x * w.matrix();
    let alpha = min_norm_solve(&xl, y)?;
    Ok(w.matrix() * alpha)
}

/// Weighted ridge with penalty `t > 0`:
/// `Lambda ((X Lambda)^T (X Lambda) + t I)^{-1} (X Lambda)^T y`.
pub fn fit_weighted_ridge(x: &DMatrix<f64>, y: &DVector<f64>, w: &EigenWeighting, t: f64) -> Result<DVector<f64>> {
    if !(t.is_finite() && t > 0.0) {
        return validation(format!("ridge penalty must be positive, got {t}"));
    }
    check_shapes(x, y, w)?;
    let xl = x * w.matrix();
    let r = xl.ncols();
    let n = xl.nrows();
    // Push-through identity keeps the solve n x n when n < R.
    let alpha = if n < r {
        let gram = &xl * xl.transpose() + DMatrix::identity(n, n) * t;
        let chol = gram
            .cholesky()
            .ok_or_else(|| crate::error::Error::Validation("ridge system is not positive definite".into()))?;
        xl.transpose() * chol.solve(y)
    } else {
        let gram = xl.transpose() * &xl + DMatrix::identity(r, r) * t;
        let chol = gram
            .cholesky()
            .ok_or_else(|| crate::error::Error::Validation("ridge system is not positive definite".into()))?;
        chol.solve(&(xl.transpose() * y))
    };
    Ok(w.matrix() * alpha)
}
