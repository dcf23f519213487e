//! Scalar autoregressive baseline for temporal factor columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::least_squares;

pub const DEFAULT_AR_LAGS: usize = 8;

/// Least-squares AR(`lags`) fit with an intercept, iterated `horizon` steps
/// past the end of `series`.
pub fn ar_extend(series: &[f64], lags: usize, horizon: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if lags == 0 {
        return Err(Error::InvalidArgument("AR baseline needs at least one lag".into()));
    }
    if n < 2 * lags + 2 {
        return Err(Error::InsufficientSupport(format!("{n} points for an AR({lags}) fit")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let rows = n - lags;
    let design = DMatrix::from_fn(rows, lags, |r, k| x[r + lags - 1 - k]);
    let target = DVector::from_iterator(rows, x[lags..].iter().copied());
    let (coef, _, _) = least_squares(&design, &target);
    let mut path = x;
    for _ in 0..horizon {
        let t = path.len();
        let next: f64 = (0..lags).map(|k| coef[k] * path[t - 1 - k]).sum();
        path.push(next);
    }
    Ok(path[n..].iter().map(|v| v + mean).collect())
}
