use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ClaError, Result};
use crate::scalar::Scalar;

/// Percentile of already sorted values by linear interpolation between order
/// statistics (position `p * (n - 1)`).
pub fn percentile<T: Scalar>(sorted: &[T], p: T) -> T {
    debug_assert!(!sorted.is_empty());
    let pos = p * T::from_count(sorted.len() - 1);
    let lo = pos.floor();
    let frac = pos - lo;
    let i = lo.to_usize().unwrap_or(0).min(sorted.len() - 1);
    if i + 1 >= sorted.len() || frac == T::zero() {
        return sorted[i];
    }
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

/// Clamps each column to its `[lower_pct, upper_pct]` interpolated percentiles.
pub fn winsorize<T: Scalar>(matrix: ArrayView2<'_, T>, lower_pct: T, upper_pct: T) -> Result<Array2<T>> {
    if matrix.is_empty() {
        return Err(ClaError::Empty("winsorize: matrix"));
    }
    if !(T::zero() <= lower_pct && lower_pct < upper_pct && upper_pct <= T::one()) {
        return Err(ClaError::InvalidArgument(format!(
            "winsorize: need 0 <= lower ({lower_pct}) < upper ({upper_pct}) <= 1"
        )));
    }
    let mut out = matrix.to_owned();
    let mut scratch = Vec::with_capacity(matrix.nrows());
    for mut col in out.axis_iter_mut(Axis(1)) {
        scratch.clear();
        scratch.extend(col.iter().copied());
        scratch.sort_by(|a, b| a.partial_cmp(b).expect("finite column"));
        let lo = percentile(&scratch, lower_pct);
        let hi = percentile(&scratch, upper_pct);
        col.mapv_inplace(|v| v.max(lo).min(hi));
    }
    Ok(out)
}

/// Per-column location and scale (population convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NormStats<T: Scalar> {
    pub mean: Vec<T>,
    pub sd: Vec<T>,
}

impl<T: Scalar> NormStats<T> {
    pub fn fit(matrix: ArrayView2<'_, T>) -> Result<Self> {
        if matrix.is_empty() {
            return Err(ClaError::Empty("zscore: matrix"));
        }
        let n = T::from_count(matrix.nrows());
        let mut mean = Vec::with_capacity(matrix.ncols());
        let mut sd = Vec::with_capacity(matrix.ncols());
        for col in matrix.axis_iter(Axis(1)) {
            let m = col.iter().copied().sum::<T>() / n;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
            let s = var.sqrt();
            // rounding noise on a constant column is not spread
            let floor = T::epsilon() * T::lit(8.0) * m.abs().max(T::one());
            mean.push(m);
            sd.push(if s <= floor { T::zero() } else { s });
        }
        Ok(Self { mean, sd })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes `matrix` with these statistics; zero-variance columns map to 0.
    pub fn apply(&self, matrix: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if matrix.ncols() != self.mean.len() {
            return Err(ClaError::ShapeMismatch { expected: self.mean.len(), found: matrix.ncols() });
        }
        let mut out = matrix.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.sd[j]);
            if s == T::zero() {
                col.fill(T::zero());
            } else {
                col.mapv_inplace(|v| (v - m) / s);
            }
        }
        Ok(out)
    }
}

/// Column z-scores plus the statistics that produced them.
pub fn zscore_normalize<T: Scalar>(matrix: ArrayView2<'_, T>) -> Result<(Array2<T>, NormStats<T>)> {
    let stats = NormStats::fit(matrix)?;
    let z = stats.apply(matrix)?;
    Ok((z, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn winsorize_four_point_column() {
        // sorted [0,5,10,1000]; 5th pct at pos 0.15 -> 0.75, 95th at pos 2.85 -> 851.5
        let m = array![[0.0], [5.0], [10.0], [1000.0]];
        let w = winsorize(m.view(), 0.05, 0.95).unwrap();
        assert!((w[[0, 0]] - 0.75_f64).abs() < 1e-12);
        assert_eq!(w[[1, 0]], 5.0);
        assert_eq!(w[[2, 0]], 10.0);
        assert!((w[[3, 0]] - 851.5_f64).abs() < 1e-9);
    }

    #[test]
    fn winsorize_full_range_and_constant_are_identity() {
        let m = array![[1.0, 3.0], [-7.0, 3.0], [2.5, 3.0]];
        assert_eq!(winsorize(m.view(), 0.0, 1.0).unwrap(), m);
        let w = winsorize(m.view(), 0.1, 0.9).unwrap();
        assert_eq!(w.column(1), m.column(1));
    }

    #[test]
    fn winsorize_rejects_bad_input() {
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(winsorize(empty.view(), 0.01, 0.99).is_err());
        let m = array![[1.0]];
        assert!(winsorize(m.view(), 0.5, 0.5).is_err());
    }

    #[test]
    fn zscore_hand_values() {
        let m = array![[1.0_f64], [2.0], [3.0]];
        let (z, stats) = zscore_normalize(m.view()).unwrap();
        let e = 1.0 / (2.0_f64 / 3.0).sqrt();
        assert!((z[[0, 0]] + e).abs() < 1e-6);
        assert!(z[[1, 0]].abs() < 1e-12);
        assert!((z[[2, 0]] - 1.2247).abs() < 1e-4);
        assert_eq!(stats.mean, vec![2.0]);
    }

    #[test]
    fn zscore_constant_column_is_zero() {
        let m = array![[0.1_f64, 1.0], [0.1, 2.0], [0.1, 4.0]];
        let (z, stats) = zscore_normalize(m.view()).unwrap();
        assert_eq!(stats.sd[0], 0.0);
        assert!(z.column(0).iter().all(|&v| v == 0.0));
    }

    proptest! {
        // exact idempotence holds when both percentile positions fall on order
        // statistics: n = 101 with 1st/99th percentiles
        #[test]
        fn winsorize_idempotent_on_integral_positions(col in prop::collection::vec(-1e3f64..1e3, 101)) {
            let m = Array2::from_shape_vec((101, 1), col).unwrap();
            let once = winsorize(m.view(), 0.01, 0.99).unwrap();
            let twice = winsorize(once.view(), 0.01, 0.99).unwrap();
            prop_assert_eq!(once, twice);
        }

        // in general a second pass never widens the clamp range of the first
        #[test]
        fn winsorize_second_pass_stays_inside(col in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            let n = col.len();
            let m = Array2::from_shape_vec((n, 1), col).unwrap();
            let once = winsorize(m.view(), 0.05, 0.95).unwrap();
            let twice = winsorize(once.view(), 0.05, 0.95).unwrap();
            let lo = once.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = once.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(twice.iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn zscore_columns_standardized(
            data in prop::collection::vec(-100.0f64..100.0, 6..60),
        ) {
            let n = data.len() / 2;
            let m = Array2::from_shape_vec((n, 2), data[..2 * n].to_vec()).unwrap();
            let (z, stats) = zscore_normalize(m.view()).unwrap();
            for j in 0..2 {
                if stats.sd[j] == 0.0 { continue; }
                let col = z.column(j);
                let mean = col.sum() / n as f64;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
            let (again, _) = zscore_normalize(z.view()).unwrap();
            for (a, b) in again.iter().zip(z.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
