//! Panel data: ingestion, preprocessing and synthetic regime generation.

mod factors;
mod panel;
mod preprocess;
mod synthetic;

pub use factors::{estimate_factor_loadings, FactorLoadings};
pub use panel::{load_panel, read_panel, PanelSchema};
pub use preprocess::{percentile, winsorize, zscore_normalize, NormStats};
pub use synthetic::{generate_synthetic_regimes, RegimeSpec, SyntheticPanel};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ClaError, Result};
use crate::scalar::Scalar;

/// A panel of securities observed over an ordered list of periods.
///
/// `targets[t][i]` is the forward return of security `i` from period `t`,
/// known only once the forecast horizon has elapsed (`None` when it never
/// became observable in the file). `returns`, when present, holds realized
/// one-period returns used by the backtest to compound holding spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<T: Scalar> {
    pub periods: Vec<String>,
    pub feature_names: Vec<String>,
    pub securities: Vec<Vec<String>>,
    pub features: Vec<Array2<T>>,
    pub targets: Vec<Vec<Option<T>>>,
    pub returns: Option<Vec<Vec<Option<T>>>>,
}

/// Borrowed snapshot of one period: the context matrix and its aligned targets.
#[derive(Debug, Clone, Copy)]
pub struct PanelWindow<'a, T: Scalar> {
    pub index: usize,
    pub period: &'a str,
    pub securities: &'a [String],
    pub features: ArrayView2<'a, T>,
    pub targets: &'a [Option<T>],
}

impl<T: Scalar> Dataset<T> {
    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn window(&self, t: usize) -> PanelWindow<'_, T> {
        PanelWindow {
            index: t,
            period: &self.periods[t],
            securities: &self.securities[t],
            features: self.features[t].view(),
            targets: &self.targets[t],
        }
    }

    /// Checks the structural invariants: aligned shapes, finite features.
    pub fn validate(&self) -> Result<()> {
        let n = self.periods.len();
        if self.securities.len() != n || self.features.len() != n || self.targets.len() != n {
            return Err(ClaError::InvalidArgument(
                "per-period vectors must all have one entry per period".into(),
            ));
        }
        if let Some(ret) = &self.returns {
            if ret.len() != n {
                return Err(ClaError::ShapeMismatch { expected: n, found: ret.len() });
            }
        }
        let k = self.n_features();
        for t in 0..n {
            let rows = self.securities[t].len();
            if rows == 0 {
                return Err(ClaError::EmptyPeriod { period: self.periods[t].clone() });
            }
            let x = &self.features[t];
            if x.nrows() != rows {
                return Err(ClaError::ShapeMismatch { expected: rows, found: x.nrows() });
            }
            if x.ncols() != k {
                return Err(ClaError::ShapeMismatch { expected: k, found: x.ncols() });
            }
            if self.targets[t].len() != rows {
                return Err(ClaError::ShapeMismatch { expected: rows, found: self.targets[t].len() });
            }
            if let Some(ret) = &self.returns {
                if ret[t].len() != rows {
                    return Err(ClaError::ShapeMismatch { expected: rows, found: ret[t].len() });
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(ClaError::InvalidArgument(format!(
                    "non-finite feature in period `{}`",
                    self.periods[t]
                )));
            }
        }
        Ok(())
    }
}
