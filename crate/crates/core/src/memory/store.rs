use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::base_model::{self, BaseParams};
use crate::data::NormStats;
use crate::error::{ClaError, Result};
use crate::scalar::Scalar;

/// A training context: the feature matrix a column was fit on, stored
/// standardized by its own statistics, together with those statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Context<T: Scalar> {
    pub features: Array2<T>,
    pub stats: NormStats<T>,
}

impl<T: Scalar> Context<T> {
    /// Standardizes raw features and keeps the statistics.
    pub fn from_raw(raw: ArrayView2<'_, T>) -> Result<Self> {
        let stats = NormStats::fit(raw)?;
        Ok(Self { features: stats.apply(raw)?, stats })
    }
}

/// Parameters plus the context that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelColumn<T: Scalar> {
    pub params: BaseParams<T>,
    pub context: Context<T>,
    /// Label of the last period in the training window.
    pub trained_through: String,
}

impl<T: Scalar> ModelColumn<T> {
    /// Forecasts for raw features, standardized with this column's statistics.
    pub fn predict_raw(&self, raw: ArrayView2<'_, T>) -> Result<Vec<T>> {
        let x = self.context.stats.apply(raw)?;
        base_model::predict(&self.params, x.view())
    }
}

/// One remembered column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelMemory<T: Scalar> {
    /// Index of the base snapshot this memory copies; increases with creation.
    pub id: usize,
    /// Period at which the remember cue fired.
    pub created_at: String,
    pub column: ModelColumn<T>,
    /// Sum of the weights this memory has received in blends so far.
    pub recall_weight: T,
}

/// Ordered memories plus the live base column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MemoryStore<T: Scalar> {
    pub memories: Vec<ModelMemory<T>>,
    pub base: ModelColumn<T>,
    /// Snapshot index of the live base column.
    pub base_id: usize,
    pub capacity: Option<usize>,
}

impl<T: Scalar> MemoryStore<T> {
    pub fn new(base: ModelColumn<T>, base_id: usize, capacity: Option<usize>) -> Self {
        Self { memories: Vec::new(), base, base_id, capacity }
    }

    pub fn len(&self) -> usize {
        self.memories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memories.is_empty()
    }

    /// Replaces the base column after retraining.
    pub fn set_base(&mut self, base: ModelColumn<T>, base_id: usize) {
        self.base = base;
        self.base_id = base_id;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Appends a deep copy of the base column when `|eps| >= j_crit`.
///
/// Returns whether a memory was appended. `j_crit = None` means no threshold
/// has been learned yet and nothing is remembered.
pub fn maybe_remember<T: Scalar>(
    store: &mut MemoryStore<T>,
    eps: T,
    j_crit: Option<T>,
    created_at: &str,
) -> Result<bool> {
    if eps < T::zero() || !eps.is_finite() {
        return Err(ClaError::InvalidArgument(format!("remember: error {eps} must be finite and >= 0")));
    }
    let Some(j) = j_crit else { return Ok(false) };
    if j < T::zero() {
        return Err(ClaError::InvalidArgument(format!("remember: threshold {j} must be >= 0")));
    }
    if eps.abs() < j {
        return Ok(false);
    }
    if let Some(last) = store.memories.last() {
        if last.id >= store.base_id {
            return Err(ClaError::InvalidArgument(format!(
                "remember: base snapshot {} already stored",
                store.base_id
            )));
        }
    }
    store.memories.push(ModelMemory {
        id: store.base_id,
        created_at: created_at.to_string(),
        column: store.base.clone(),
        recall_weight: T::zero(),
    });
    Ok(true)
}

/// Evicts lowest-recall-weight memories (oldest on ties) until the store fits
/// its capacity. Returns the evicted ids; no-op without a capacity.
pub fn forget<T: Scalar>(store: &mut MemoryStore<T>) -> Vec<usize> {
    let mut evicted = Vec::new();
    let Some(cap) = store.capacity else { return evicted };
    while store.memories.len() > cap {
        let mut worst = 0;
        for (i, m) in store.memories.iter().enumerate().skip(1) {
            if m.recall_weight < store.memories[worst].recall_weight {
                worst = i;
            }
        }
        evicted.push(store.memories.remove(worst).id);
    }
    evicted
}

/// Per-period base errors and realized CLA errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ErrorHistory<T: Scalar> {
    /// `(period, ε_B)`; entry `k` is the out-of-sample error of base snapshot `k`.
    pub base: Vec<(String, T)>,
    /// `(period, CLA error)` for every forecast whose target became observable.
    pub cla: Vec<(String, T)>,
}

impl<T: Scalar> ErrorHistory<T> {
    pub fn base_errors(&self) -> Vec<T> {
        self.base.iter().map(|(_, e)| *e).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn column(seed: f64) -> ModelColumn<f64> {
        let mut params = BaseParams::zeros(2, &[2]);
        params.layers[1].biases[0] = seed;
        ModelColumn {
            params,
            context: Context::from_raw(array![[1.0, seed], [2.0, 0.0], [4.0, -seed]].view()).unwrap(),
            trained_through: format!("{seed}"),
        }
    }

    fn store() -> MemoryStore<f64> {
        MemoryStore::new(column(0.5), 3, None)
    }

    #[test]
    fn remember_threshold_examples() {
        let mut s = store();
        assert!(maybe_remember(&mut s, 0.5, Some(0.3), "p").unwrap());
        assert_eq!(s.len(), 1);
        let mut s = store();
        assert!(!maybe_remember(&mut s, 0.1, Some(0.3), "p").unwrap());
        assert!(s.is_empty());
        let mut s = store();
        assert!(maybe_remember(&mut s, 0.3, Some(0.3), "p").unwrap());
        let mut s = store();
        assert!(!maybe_remember(&mut s, 9.0, None, "p").unwrap());
    }

    #[test]
    fn snapshot_is_isolated_from_base() {
        let mut s = store();
        maybe_remember(&mut s, 1.0, Some(0.0), "p").unwrap();
        let frozen = serde_json::to_string(&s.memories[0]).unwrap();
        s.base.params.layers[0].weights[0] = 123.0;
        s.base.context.features[[0, 0]] = -9.0;
        s.set_base(column(7.0), 4);
        assert_eq!(serde_json::to_string(&s.memories[0]).unwrap(), frozen);
    }

    #[test]
    fn same_snapshot_cannot_be_stored_twice() {
        let mut s = store();
        maybe_remember(&mut s, 1.0, Some(0.0), "p").unwrap();
        assert!(maybe_remember(&mut s, 1.0, Some(0.0), "p").is_err());
    }

    fn with_weights(w: &[f64], cap: Option<usize>) -> MemoryStore<f64> {
        let mut s = MemoryStore::new(column(0.0), 100, cap);
        for (i, &rw) in w.iter().enumerate() {
            s.memories.push(ModelMemory { id: i, created_at: i.to_string(), column: column(i as f64), recall_weight: rw });
        }
        s
    }

    #[test]
    fn forget_evicts_lowest_weight() {
        let mut s = with_weights(&[0.5, 0.1, 0.3, 0.4], Some(3));
        assert_eq!(forget(&mut s), vec![1]);
        assert_eq!(s.memories.iter().map(|m| m.id).collect::<Vec<_>>(), vec![0, 2, 3]);
    }

    #[test]
    fn forget_without_capacity_is_identity() {
        let mut s = with_weights(&[0.5, 0.1, 0.3, 0.4], None);
        let before = s.clone();
        assert!(forget(&mut s).is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn forget_tie_evicts_oldest() {
        let mut s = with_weights(&[0.0, 0.0, 0.0], Some(2));
        assert_eq!(forget(&mut s), vec![0]);
    }

    #[test]
    fn store_json_round_trip() {
        let mut s = store();
        maybe_remember(&mut s, 1.0, Some(0.0), "p").unwrap();
        let back = MemoryStore::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
