use ndarray::Array2;

use crate::error::{ClaError, Result};
use crate::scalar::Scalar;

/// Market and value loadings per security, one `(β_mkt, β_val)` column pair
/// per requested lag.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorLoadings<T: Scalar> {
    pub matrix: Array2<T>,
    /// Rows whose regression was singular at any lag; their row is all zeros
    /// and they must be left out of training.
    pub degenerate: Vec<bool>,
    pub lags: Vec<usize>,
}

impl<T: Scalar> FactorLoadings<T> {
    pub fn usable_rows(&self) -> Vec<usize> {
        (0..self.degenerate.len()).filter(|&i| !self.degenerate[i]).collect()
    }
}

/// Fitted `(alpha, beta_mkt, beta_val)`, `None` when the design is singular.
pub(crate) fn ols_two_factor<T: Scalar>(y: &[T], x1: &[T], x2: &[T]) -> Option<(T, T, T)> {
    let n = T::from_count(y.len());
    let m1 = x1.iter().copied().sum::<T>() / n;
    let m2 = x2.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut s11, mut s22, mut s12, mut s1y, mut s2y) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    let (mut q1, mut q2) = (T::zero(), T::zero());
    for i in 0..y.len() {
        let (a, b, c) = (x1[i] - m1, x2[i] - m2, y[i] - my);
        s11 += a * a;
        s22 += b * b;
        s12 += a * b;
        s1y += a * c;
        s2y += b * c;
        q1 += x1[i] * x1[i];
        q2 += x2[i] * x2[i];
    }
    let tol = T::lit(1e-12);
    // a regressor with no variation beyond the intercept
    if s11 <= tol * q1 || s22 <= tol * q2 || s11 == T::zero() || s22 == T::zero() {
        return None;
    }
    let det = s11 * s22 - s12 * s12;
    if !det.is_finite() || det <= tol * s11 * s22 {
        return None;
    }
    let b1 = (s22 * s1y - s12 * s2y) / det;
    let b2 = (s11 * s2y - s12 * s1y) / det;
    let alpha = my - b1 * m1 - b2 * m2;
    if !(alpha.is_finite() && b1.is_finite() && b2.is_finite()) {
        return None;
    }
    Some((alpha, b1, b2))
}

/// Rolling two-factor regressions `r = α + β_mkt·x_mkt + β_val·x_val + ε`.
///
/// For lag `l` the regression uses the `window` periods ending `l` periods
/// before the last observation. Output columns are ordered
/// `[β_mkt(lag0), β_val(lag0), β_mkt(lag1), ...]` following `lags`.
pub fn estimate_factor_loadings<T: Scalar>(
    excess_returns: &[Vec<T>],
    market: &[T],
    value: &[T],
    window: usize,
    lags: &[usize],
) -> Result<FactorLoadings<T>> {
    if excess_returns.is_empty() {
        return Err(ClaError::Empty("factor loadings: no securities"));
    }
    if lags.is_empty() {
        return Err(ClaError::Empty("factor loadings: no lags"));
    }
    // intercept plus two slopes, plus two degrees of freedom
    if window < 5 {
        return Err(ClaError::InvalidArgument(format!("regression window {window} < 5")));
    }
    let len = market.len();
    if value.len() != len {
        return Err(ClaError::ShapeMismatch { expected: len, found: value.len() });
    }
    let max_lag = *lags.iter().max().unwrap();
    if len < window + max_lag {
        return Err(ClaError::InsufficientPeriods { needed: window + max_lag, got: len });
    }

    let mut matrix = Array2::zeros((excess_returns.len(), 2 * lags.len()));
    let mut degenerate = vec![false; excess_returns.len()];
    for (i, series) in excess_returns.iter().enumerate() {
        if series.len() != len {
            return Err(ClaError::ShapeMismatch { expected: len, found: series.len() });
        }
        let mut row = Vec::with_capacity(2 * lags.len());
        for &lag in lags {
            let end = len - lag;
            let span = end - window..end;
            match ols_two_factor(&series[span.clone()], &market[span.clone()], &value[span]) {
                Some((_, bm, bv)) => {
                    row.push(bm);
                    row.push(bv);
                }
                None => {
                    degenerate[i] = true;
                    break;
                }
            }
        }
        if !degenerate[i] {
            for (j, v) in row.into_iter().enumerate() {
                matrix[[i, j]] = v;
            }
        }
    }
    Ok(FactorLoadings { matrix, degenerate, lags: lags.to_vec() })
}
