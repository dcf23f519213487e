//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value cutoff used by every pseudoinverse in the crate.
pub const PINV_RTOL: f64 = 1e-12;

/// Pseudoinverse of a symmetric matrix by eigendecomposition.
///
/// Eigenvalues below `PINV_RTOL * max|eig|` are dropped. The flag reports
/// whether any were dropped.
pub fn pinv_symmetric(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max_abs == 0.0 {
        return (DMatrix::zeros(n, n), true);
    }
    let cutoff = PINV_RTOL * max_abs;
    let mut degenerate = false;
    let inv_vals = eig.eigenvalues.map(|v| {
        if v.abs() > cutoff {
            1.0 / v
        } else {
            degenerate = true;
            0.0
        }
    });
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&inv_vals) * q.transpose(), degenerate)
}

/// Minimum-norm least-squares solution of `x * beta ≈ y` via SVD.
///
/// Returns the coefficients, the pseudoinverse of `x^T x` (for standard
/// errors) and whether the design was rank deficient.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, bool) {
    let p = x.ncols();
    if p == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0), false);
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let cutoff = PINV_RTOL * smax;
    let degenerate = smax == 0.0 || svd.singular_values.iter().any(|&s| s <= cutoff) || x.nrows() < p;
    let beta = if smax == 0.0 {
        DVector::zeros(p)
    } else {
        svd.solve(y, cutoff).unwrap_or_else(|_| DVector::zeros(p))
    };
    let (xtx_pinv, _) = pinv_symmetric(&(x.transpose() * x));
    (beta, xtx_pinv, degenerate)
}

/// Inverse and log-determinant of a symmetric positive-definite matrix.
///
/// Falls back to an eigenvalue floor if Cholesky fails on round-off.
pub fn spd_inverse_logdet(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(chol) = sym.clone().cholesky() {
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        return (chol.inverse(), logdet);
    }
    let eig = SymmetricEigen::new(sym);
    let floor = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())) * 1e-14 + f64::MIN_POSITIVE;
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let logdet = vals.iter().map(|v| v.ln()).sum();
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&vals.map(|v| 1.0 / v)) * q.transpose(), logdet)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v))
}
