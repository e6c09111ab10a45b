//! Balancing column forecasts: best column, similarity-weighted blend and the
//! equal-weight ablation.

use serde::{Deserialize, Serialize};

use crate::error::{ClaError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Balancing {
    Best,
    #[serde(alias = "simweight")]
    SimWeight,
    Equal,
    /// Base column only; memory is never consulted.
    Base,
}

impl std::str::FromStr for Balancing {
    type Err = ClaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best" => Ok(Self::Best),
            "simweight" => Ok(Self::SimWeight),
            "equal" => Ok(Self::Equal),
            "base" => Ok(Self::Base),
            other => Err(ClaError::InvalidArgument(format!("unknown balancing mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for Balancing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Best => "best",
            Self::SimWeight => "simweight",
            Self::Equal => "equal",
            Self::Base => "base",
        })
    }
}

/// One candidate in a blend.
#[derive(Debug, Clone, Copy)]
pub struct Column<'a, T> {
    pub forecasts: &'a [T],
    pub distance: T,
    /// Creation order; larger is newer.
    pub created: u64,
}

/// Weights `1 - d_m / Σd` rescaled to sum to one.
///
/// A single column gets weight one; equal distances give uniform weights.
pub fn mixture_weights<T: Scalar>(distances: &[T]) -> Result<Vec<T>> {
    if distances.is_empty() {
        return Err(ClaError::Empty("mixture weights: no distances"));
    }
    if distances.iter().any(|d| !(*d >= T::zero()) || !d.is_finite()) {
        return Err(ClaError::InvalidArgument("mixture weights: distances must be finite and >= 0".into()));
    }
    let m = distances.len();
    if m == 1 {
        return Ok(vec![T::one()]);
    }
    let total: T = distances.iter().copied().sum();
    // equal distances (all zero included) are exactly uniform
    if total == T::zero() || distances.iter().all(|&d| d == distances[0]) {
        return Ok(vec![T::one() / T::from_count(m); m]);
    }
    let raw: Vec<T> = distances.iter().map(|&d| T::one() - d / total).collect();
    let raw_sum: T = raw.iter().copied().sum();
    Ok(raw.into_iter().map(|r| r / raw_sum).collect())
}

fn check_columns<T: Scalar>(columns: &[Column<'_, T>]) -> Result<usize> {
    let first = columns.first().ok_or(ClaError::Empty("balancing: no columns"))?;
    let n = first.forecasts.len();
    if let Some(c) = columns.iter().find(|c| c.forecasts.len() != n) {
        return Err(ClaError::ShapeMismatch { expected: n, found: c.forecasts.len() });
    }
    Ok(n)
}

/// Index of the lowest-distance column; ties go to the newest.
pub fn best_index<T: Scalar>(columns: &[Column<'_, T>]) -> Result<usize> {
    check_columns(columns)?;
    let mut best = 0;
    for (i, c) in columns.iter().enumerate().skip(1) {
        let b = &columns[best];
        if c.distance < b.distance || (c.distance == b.distance && c.created > b.created) {
            best = i;
        }
    }
    Ok(best)
}

/// Per-security convex combination of column forecasts.
pub fn blend<T: Scalar>(columns: &[Column<'_, T>], weights: &[T]) -> Result<Vec<T>> {
    let n = check_columns(columns)?;
    if weights.len() != columns.len() {
        return Err(ClaError::ShapeMismatch { expected: columns.len(), found: weights.len() });
    }
    let mut out = vec![T::zero(); n];
    for (c, &w) in columns.iter().zip(weights) {
        for (o, &f) in out.iter_mut().zip(c.forecasts) {
            *o += w * f;
        }
    }
    Ok(out)
}

/// Forecast of the single most similar column.
pub fn g_best<T: Scalar>(columns: &[Column<'_, T>]) -> Result<Vec<T>> {
    Ok(columns[best_index(columns)?].forecasts.to_vec())
}

/// Similarity-weighted ensemble of all columns.
pub fn g_simweight<T: Scalar>(columns: &[Column<'_, T>]) -> Result<Vec<T>> {
    check_columns(columns)?;
    let d: Vec<T> = columns.iter().map(|c| c.distance).collect();
    blend(columns, &mixture_weights(&d)?)
}

/// Unweighted mean of all column forecasts.
pub fn g_equal<T: Scalar>(columns: &[Column<'_, T>]) -> Result<Vec<T>> {
    check_columns(columns)?;
    let w = vec![T::one() / T::from_count(columns.len()); columns.len()];
    blend(columns, &w)
}

/// Weights the given mode assigns; the base column is expected at index 0.
pub fn weights_for<T: Scalar>(mode: Balancing, columns: &[Column<'_, T>]) -> Result<Vec<T>> {
    check_columns(columns)?;
    let m = columns.len();
    Ok(match mode {
        Balancing::SimWeight => mixture_weights(&columns.iter().map(|c| c.distance).collect::<Vec<_>>())?,
        Balancing::Equal => vec![T::one() / T::from_count(m); m],
        Balancing::Best => {
            let mut w = vec![T::zero(); m];
            w[best_index(columns)?] = T::one();
            w
        }
        Balancing::Base => {
            let mut w = vec![T::zero(); m];
            w[0] = T::one();
            w
        }
    })
}

/// Blended forecast and the weights behind it.
pub fn balance<T: Scalar>(mode: Balancing, columns: &[Column<'_, T>]) -> Result<(Vec<T>, Vec<T>)> {
    let w = weights_for(mode, columns)?;
    let f = match mode {
        Balancing::Best => g_best(columns)?,
        Balancing::Base => columns[0].forecasts.to_vec(),
        Balancing::SimWeight | Balancing::Equal => blend(columns, &w)?,
    };
    Ok((f, w))
}
