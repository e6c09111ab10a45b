//! Banded dynamic time warping and the sampled expected distance between two
//! context matrices.
//!
//! Context rows are compared as sequences over their lag columns. The
//! expected distance draws the row of each side independently.

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClaError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dtw<T> {
    pub distance: T,
    /// Band actually used; larger than requested when the length difference
    /// made the requested band infeasible.
    pub band: usize,
    pub widened: bool,
}

/// DTW with absolute-difference local cost under a Sakoe–Chiba band
/// `|i - j| <= band`.
pub fn dtw_banded<T: Scalar>(a: &[T], b: &[T], band: usize) -> Result<Dtw<T>> {
    if a.is_empty() || b.is_empty() {
        return Err(ClaError::Empty("dtw: sequence"));
    }
    let diff = a.len().abs_diff(b.len());
    let w = band.max(diff);
    let (n, m) = (a.len(), b.len());
    let inf = T::infinity();
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    prev[0] = T::zero();
    for i in 1..=n {
        cur.fill(inf);
        let lo = i.saturating_sub(w).max(1);
        let hi = (i + w).min(m);
        for j in lo..=hi {
            let cost = (a[i - 1] - b[j - 1]).abs();
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(Dtw { distance: prev[m], band: w, widened: w > band })
}

/// Banded DTW distance; see [`dtw_banded`].
pub fn dtw_distance<T: Scalar>(a: &[T], b: &[T], band: usize) -> Result<T> {
    dtw_banded(a, b, band).map(|d| d.distance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// `samples` independent uniform row pairs.
    Random,
    /// Every row pair once; the estimator's exact target.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtwConfig {
    /// Band half-width; `None` means `ceil(K / 4)`, at least 1.
    pub band_width: Option<usize>,
    pub samples: usize,
    pub sampling: Sampling,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self { band_width: None, samples: 100, sampling: Sampling::Random }
    }
}

impl DtwConfig {
    pub fn band_for(&self, k: usize) -> usize {
        self.band_width.unwrap_or_else(|| k.div_ceil(4)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.band_width == Some(0) {
            return Err(ClaError::InvalidArgument("dtw.band_width: must be >= 1".into()));
        }
        if self.samples == 0 {
            return Err(ClaError::InvalidArgument("dtw.samples: must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_contexts<T: Scalar>(xm: &ArrayView2<'_, T>, xt: &ArrayView2<'_, T>) -> Result<()> {
    if xm.nrows() == 0 || xm.ncols() == 0 || xt.nrows() == 0 || xt.ncols() == 0 {
        return Err(ClaError::Empty("expected distance: context matrix"));
    }
    Ok(())
}

fn row_dtw<T: Scalar>(xm: &ArrayView2<'_, T>, i: usize, xt: &ArrayView2<'_, T>, j: usize, band: usize) -> Result<T> {
    let a = xm.row(i);
    let b = xt.row(j);
    match (a.as_slice(), b.as_slice()) {
        (Some(a), Some(b)) => dtw_distance(a, b, band),
        _ => dtw_distance(&a.to_vec(), &b.to_vec(), band),
    }
}

/// Mean DTW distance over sampled row pairs of two contexts.
///
/// Row indices are drawn independently and uniformly from each matrix's own
/// row count.
pub fn expected_distance<T: Scalar, R: Rng + ?Sized>(
    xm: ArrayView2<'_, T>,
    xt: ArrayView2<'_, T>,
    cfg: &DtwConfig,
    rng: &mut R,
) -> Result<T> {
    check_contexts(&xm, &xt)?;
    let band = cfg.band_for(xm.ncols().max(xt.ncols()));
    match cfg.sampling {
        Sampling::Exhaustive => {
            let mut sum = T::zero();
            for i in 0..xm.nrows() {
                for j in 0..xt.nrows() {
                    sum += row_dtw(&xm, i, &xt, j, band)?;
                }
            }
            Ok(sum / T::from_count(xm.nrows() * xt.nrows()))
        }
        Sampling::Random => {
            if cfg.samples == 0 {
                return Err(ClaError::InvalidArgument("dtw.samples: must be >= 1".into()));
            }
            let mut sum = T::zero();
            for _ in 0..cfg.samples {
                let i = rng.random_range(0..xm.nrows());
                let j = rng.random_range(0..xt.nrows());
                sum += row_dtw(&xm, i, &xt, j, band)?;
            }
            Ok(sum / T::from_count(cfg.samples))
        }
    }
}

/// Exact mean DTW distance over all row pairs.
pub fn exhaustive_distance<T: Scalar>(xm: ArrayView2<'_, T>, xt: ArrayView2<'_, T>, band_width: usize) -> Result<T> {
    check_contexts(&xm, &xt)?;
    let pairs = (0..xm.nrows()).flat_map(|i| (0..xt.nrows()).map(move |j| (i, j)));
    let mut sum = T::zero();
    for (i, j) in pairs {
        sum += row_dtw(&xm, i, &xt, j, band_width)?;
    }
    Ok(sum / T::from_count(xm.nrows() * xt.nrows()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// Minimum over every monotone warping path inside the band, enumerated.
    fn brute_force(a: &[f64], b: &[f64], band: usize) -> f64 {
        fn walk(a: &[f64], b: &[f64], i: usize, j: usize, band: usize, acc: f64, best: &mut f64) {
            let acc = acc + (a[i] - b[j]).abs();
            if i + 1 == a.len() && j + 1 == b.len() {
                *best = best.min(acc);
                return;
            }
            for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
                let (ni, nj) = (i + di, j + dj);
                if ni < a.len() && nj < b.len() && ni.abs_diff(nj) <= band {
                    walk(a, b, ni, nj, band, acc, best);
                }
            }
        }
        let mut best = f64::INFINITY;
        walk(a, b, 0, 0, band, 0.0, &mut best);
        best
    }

    #[test]
    fn hand_examples() {
        assert_eq!(dtw_distance(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], 3).unwrap(), 0.0);
        assert_eq!(dtw_distance(&[0.0, 1.0, 2.0], &[0.0, 2.0], 10).unwrap(), 1.0);
        let fwd = dtw_distance(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], 3).unwrap();
        let rev = dtw_distance(&[2.0, 1.0, 0.0], &[0.0, 1.0, 2.0], 3).unwrap();
        assert_eq!(rev, brute_force(&[2.0, 1.0, 0.0], &[0.0, 1.0, 2.0], 3));
        assert!(rev > fwd);
    }

    #[test]
    fn empty_sequence_errors() {
        assert!(dtw_distance::<f64>(&[], &[1.0], 1).is_err());
    }

    #[test]
    fn band_widened_when_infeasible() {
        let r = dtw_banded(&[0.0_f64; 6], &[0.0; 2], 1).unwrap();
        assert!(r.widened);
        assert_eq!(r.band, 4);
        assert_eq!(r.distance, 0.0);
        assert!(!dtw_banded(&[0.0_f64; 3], &[0.0; 3], 1).unwrap().widened);
    }

    #[test]
    fn f32_agrees_with_f64() {
        let a = [0.5f32, -1.0, 2.0, 0.25];
        let b = [0.0f32, 1.0, 1.5];
        let a64: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let b64: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        let d32 = dtw_distance(&a, &b, 2).unwrap() as f64;
        assert!((d32 - dtw_distance(&a64, &b64, 2).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn two_by_two_panels() {
        let xm = array![[0.0, 1.0, 2.0], [1.0, 1.0, 1.0]];
        let xt = array![[0.0, 2.0, 2.0], [3.0, 0.0, 0.0]];
        let d = |a: &[f64], b: &[f64]| brute_force(a, b, 1);
        let rows_m = [[0.0, 1.0, 2.0], [1.0, 1.0, 1.0]];
        let rows_t = [[0.0, 2.0, 2.0], [3.0, 0.0, 0.0]];
        let mut hand = 0.0;
        for a in &rows_m {
            for b in &rows_t {
                hand += d(a, b);
            }
        }
        hand /= 4.0;
        assert_eq!(exhaustive_distance(xm.view(), xt.view(), 1).unwrap(), hand);
        let cfg = DtwConfig { band_width: Some(1), sampling: Sampling::Exhaustive, ..DtwConfig::default() };
        let mut rng = crate::rng::stream(0, 0, 0, 0);
        assert_eq!(expected_distance(xm.view(), xt.view(), &cfg, &mut rng).unwrap(), hand);
    }

    #[test]
    fn identical_single_rows_zero() {
        let x = array![[0.3, -1.0, 2.0]];
        let mut rng = crate::rng::stream(1, 0, 0, 0);
        assert_eq!(expected_distance(x.view(), x.view(), &DtwConfig::default(), &mut rng).unwrap(), 0.0);
        assert_eq!(exhaustive_distance(x.view(), x.view(), 1).unwrap(), 0.0);
    }

    #[test]
    fn expected_distance_deterministic_per_stream() {
        let xm = ndarray::Array2::from_shape_fn((7, 5), |(i, j)| ((i * 5 + j) as f64 * 0.71).sin());
        let xt = ndarray::Array2::from_shape_fn((9, 5), |(i, j)| ((i * 3 + j) as f64 * 0.37).cos());
        let cfg = DtwConfig::default();
        let a = expected_distance(xm.view(), xt.view(), &cfg, &mut crate::rng::stream(5, 1, 2, 3)).unwrap();
        let b = expected_distance(xm.view(), xt.view(), &cfg, &mut crate::rng::stream(5, 1, 2, 3)).unwrap();
        let c = expected_distance(xm.view(), xt.view(), &cfg, &mut crate::rng::stream(5, 1, 2, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let empty = ndarray::Array2::<f64>::zeros((0, 5));
        assert!(expected_distance(empty.view(), xt.view(), &cfg, &mut crate::rng::stream(5, 1, 2, 3)).is_err());
    }

    #[test]
    fn default_band() {
        let cfg = DtwConfig::default();
        assert_eq!(cfg.band_for(8), 2);
        assert_eq!(cfg.band_for(9), 3);
        assert_eq!(cfg.band_for(1), 1);
    }

    proptest! {
        #[test]
        fn metric_like_properties(
            a in prop::collection::vec(-5.0f64..5.0, 1..10),
            b in prop::collection::vec(-5.0f64..5.0, 1..10),
            band in 1usize..6,
        ) {
            let ab = dtw_distance(&a, &b, band).unwrap();
            let ba = dtw_distance(&b, &a, band).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(dtw_distance(&a, &a, band).unwrap(), 0.0);
        }

        #[test]
        fn wide_band_is_unconstrained(
            a in prop::collection::vec(-5.0f64..5.0, 1..8),
            b in prop::collection::vec(-5.0f64..5.0, 1..8),
        ) {
            let w = a.len().max(b.len());
            prop_assert_eq!(dtw_distance(&a, &b, w).unwrap(), brute_force(&a, &b, usize::MAX));
        }
    }
}
