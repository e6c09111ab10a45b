use serde::{Deserialize, Serialize};

use super::ErrorHistory;
use crate::error::{ClaError, Result};
use crate::recall::{balance, Balancing, Column};
use crate::scalar::Scalar;

pub const JGRID_POINTS: usize = 20;

/// Candidate thresholds for the remember cue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct JGrid<T: Scalar> {
    pub values: Vec<T>,
    /// The error series had a single distinct value.
    pub degenerate: bool,
}

/// Twenty equidistant points from the minimum to the maximum error, inclusive.
pub fn build_jgrid<T: Scalar>(errors: &[T]) -> Result<JGrid<T>> {
    let first = *errors.first().ok_or(ClaError::Empty("jgrid: error series"))?;
    let (lo, hi) = errors.iter().fold((first, first), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(ClaError::InvalidArgument("jgrid: non-finite error".into()));
    }
    if lo == hi {
        return Ok(JGrid { values: vec![lo], degenerate: true });
    }
    let step = (hi - lo) / T::from_count(JGRID_POINTS - 1);
    let mut values: Vec<T> = (0..JGRID_POINTS).map(|i| lo + step * T::from_count(i)).collect();
    values[JGRID_POINTS - 1] = hi;
    Ok(JGrid { values, degenerate: false })
}

/// Forecast and distance of one base snapshot evaluated on one step's context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CachedColumn<T: Scalar> {
    pub forecasts: Vec<T>,
    pub distance: T,
}

/// One forecast step: every snapshot up to and including that step's base
/// evaluated on its context, plus realized targets once observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ReplayRow<T: Scalar> {
    pub period: String,
    /// Entry `k` is base snapshot `k`; the last entry is this step's own base.
    pub columns: Vec<CachedColumn<T>>,
    pub realized: Option<Vec<Option<T>>>,
}

/// Everything needed to replay the remember/recall pipeline under any fixed
/// threshold without retraining or recomputing distances.
///
/// The base trajectory does not depend on the threshold, so snapshot `k` is
/// the base that forecast step `k`, and `cues[k]` is its out-of-sample error,
/// known from step `k + 1` on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ReplayCache<T: Scalar> {
    pub rows: Vec<ReplayRow<T>>,
    pub cues: Vec<T>,
}

impl<T: Scalar> ReplayCache<T> {
    pub fn push_row(&mut self, row: ReplayRow<T>) -> Result<()> {
        if row.columns.len() != self.rows.len() + 1 {
            return Err(ClaError::ShapeMismatch { expected: self.rows.len() + 1, found: row.columns.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    fn last_evaluable(&self) -> Option<usize> {
        self.rows.iter().rposition(|r| r.realized.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub mode: Balancing,
    pub capacity: Option<usize>,
    /// Score only the most recent evaluable steps; `None` scores the full history.
    pub window: Option<usize>,
}

fn mean_abs_error<T: Scalar>(forecast: &[T], realized: &[Option<T>]) -> Option<T> {
    let mut sum = T::zero();
    let mut n = 0;
    for (f, r) in forecast.iter().zip(realized) {
        if let Some(r) = r {
            sum += (*f - *r).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / T::from_count(n))
}

/// Mean CLA error over the scored steps when the threshold is held at `j`
/// from the first step on. `None` when no step is scoreable.
pub fn replay_error<T: Scalar>(cache: &ReplayCache<T>, j: T, cfg: &ReplayConfig) -> Result<Option<T>> {
    let Some(last) = cache.last_evaluable() else { return Ok(None) };
    let evaluable: Vec<usize> = (0..=last).filter(|&s| cache.rows[s].realized.is_some()).collect();
    let first_scored = match cfg.window {
        Some(w) if w < evaluable.len() => evaluable[evaluable.len() - w],
        _ => 0,
    };
    // (snapshot, cumulative weight), oldest first
    let mut members: Vec<(usize, T)> = Vec::new();
    let mut total = T::zero();
    let mut scored = 0;
    for s in 0..=last {
        if s >= 1 {
            let cue = *cache.cues.get(s - 1).ok_or(ClaError::ShapeMismatch { expected: s, found: cache.cues.len() })?;
            if cue >= j {
                members.push((s - 1, T::zero()));
            }
        }
        if let Some(cap) = cfg.capacity {
            while members.len() > cap {
                let mut worst = 0;
                for i in 1..members.len() {
                    if members[i].1 < members[worst].1 {
                        worst = i;
                    }
                }
                members.remove(worst);
            }
        }
        let row = &cache.rows[s];
        let mut cols = Vec::with_capacity(members.len() + 1);
        let base = &row.columns[s];
        cols.push(Column { forecasts: &base.forecasts, distance: base.distance, created: s as u64 });
        for &(k, _) in &members {
            let c = &row.columns[k];
            cols.push(Column { forecasts: &c.forecasts, distance: c.distance, created: k as u64 });
        }
        let (blend, weights) = balance(cfg.mode, &cols)?;
        for (m, w) in members.iter_mut().zip(&weights[1..]) {
            m.1 += *w;
        }
        if s >= first_scored {
            if let Some(realized) = &row.realized {
                if let Some(e) = mean_abs_error(&blend, realized) {
                    total += e;
                    scored += 1;
                }
            }
        }
    }
    Ok((scored > 0).then(|| total / T::from_count(scored)))
}

/// Selected threshold with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct JCritChoice<T: Scalar> {
    pub value: T,
    pub grid: JGrid<T>,
    /// Replay error of each grid candidate.
    pub errors: Vec<T>,
}

/// Picks the grid candidate whose full replay has the lowest mean CLA error;
/// ties go to the smallest candidate.
pub fn learn_jcrit<T: Scalar>(history: &ErrorHistory<T>, cache: &ReplayCache<T>, cfg: &ReplayConfig) -> Result<JCritChoice<T>> {
    let errors = history.base_errors();
    if errors.len() < 2 {
        return Err(ClaError::InsufficientPeriods { needed: 2, got: errors.len() });
    }
    if errors.len() > cache.cues.len() {
        return Err(ClaError::ShapeMismatch { expected: errors.len(), found: cache.cues.len() });
    }
    let grid = build_jgrid(&errors)?;
    if grid.degenerate {
        return Ok(JCritChoice { value: grid.values[0], errors: vec![], grid });
    }
    let mut scores = Vec::with_capacity(grid.values.len());
    for &j in &grid.values {
        match replay_error(cache, j, cfg)? {
            Some(e) => scores.push(e),
            None => return Err(ClaError::InsufficientPeriods { needed: 1, got: 0 }),
        }
    }
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] < scores[best] {
            best = i;
        }
    }
    Ok(JCritChoice { value: grid.values[best], grid, errors: scores })
}
