//! The sliding-window driver.
//!
//! Each step first runs the backward pass for the period whose target has
//! just become observable (base error, remember cue, retrain, threshold
//! update, forgetting) and then the forward pass for the current period
//! (every column forecasts, distances to the current context, balancing).

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_model::{self, TrainConfig};
use crate::data::{winsorize, Dataset};
use crate::error::{ClaError, Result};
use crate::memory::{
    forget, learn_jcrit, maybe_remember, CachedColumn, Context, ErrorHistory, MemoryStore, ModelColumn,
    ReplayCache, ReplayConfig, ReplayRow,
};
use crate::recall::{balance, Balancing, Column};
use crate::rng::{self, domain};
use crate::scalar::Scalar;
use crate::similarity::{expected_distance, DtwConfig};

/// Share of the study term used as burn-in when none is configured
/// (24 training months out of 2001–2017).
pub const DEFAULT_BURN_IN_RATIO: f64 = 24.0 / 204.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: Balancing,
    /// Periods until a forecast's target is observable.
    pub horizon: usize,
    /// Periods between rebalances in the backtest.
    pub stride: usize,
    /// Periods stacked into each base training batch.
    pub train_window: usize,
    /// Score only this many recent steps when learning the threshold.
    pub replay_window: Option<usize>,
    pub capacity: Option<usize>,
    /// Steps before this period index are flagged as warm-up.
    pub burn_in: Option<usize>,
    /// Per-period feature winsorization percentiles.
    pub winsorize: Option<[f64; 2]>,
    /// Hold the remember threshold fixed instead of learning it.
    pub fixed_jcrit: Option<f64>,
    pub seed: u64,
    pub train: TrainConfig,
    pub dtw: DtwConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Balancing::SimWeight,
            horizon: 12,
            stride: 6,
            train_window: 1,
            replay_window: None,
            capacity: None,
            burn_in: None,
            winsorize: Some([0.01, 0.99]),
            fixed_jcrit: None,
            seed: 0,
            train: TrainConfig::default(),
            dtw: DtwConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ClaError::InvalidArgument(m.to_string()));
        if self.horizon == 0 {
            return bad("engine.horizon: must be >= 1");
        }
        if self.stride == 0 {
            return bad("engine.stride: must be >= 1");
        }
        if self.train_window == 0 {
            return bad("engine.train_window: must be >= 1");
        }
        if self.replay_window == Some(0) {
            return bad("engine.replay_window: must be >= 1");
        }
        if let Some([lo, hi]) = self.winsorize {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return bad("engine.winsorize: need 0 <= lower < upper <= 1");
            }
        }
        if let Some(j) = self.fixed_jcrit {
            if !(j >= 0.0) {
                return bad("engine.fixed_jcrit: must be >= 0");
            }
        }
        self.train.validate()?;
        self.dtw.validate()
    }

    /// Index of the first period that can be forecast.
    pub fn first_step(&self) -> usize {
        self.train_window - 1 + self.horizon
    }

    pub fn min_periods(&self) -> usize {
        self.train_window + self.horizon
    }

    pub fn burn_in_for(&self, n_periods: usize) -> usize {
        let default = (n_periods as f64 * DEFAULT_BURN_IN_RATIO).ceil() as usize;
        self.burn_in.unwrap_or(default).max(self.first_step())
    }
}

/// Seed of the base model trained at step `row`.
pub fn train_seed(seed: u64, row: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(row as u64)
}

/// Column entry in a step trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ColumnTrace<T: Scalar> {
    /// Base snapshot index; memories keep the index of the snapshot they copy.
    pub id: usize,
    pub is_base: bool,
    /// Last period of the column's training window.
    pub context_period: String,
    pub distance: T,
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StepTrace<T: Scalar> {
    pub step: usize,
    pub period: String,
    pub warmup: bool,
    /// Base column first, then memories oldest to newest.
    pub columns: Vec<ColumnTrace<T>>,
    /// Column id with the largest weight.
    pub winner: usize,
    pub remembered: bool,
    /// Period whose error was evaluated in this step's backward pass.
    pub error_period: Option<String>,
    pub eps: Option<T>,
    /// Threshold in force after this step's update.
    pub jcrit: Option<T>,
    pub evicted: Vec<usize>,
    pub securities: Vec<String>,
    pub forecasts: Vec<T>,
    pub base_forecasts: Vec<T>,
    /// Forward returns of this period, filled in from the dataset after the run.
    pub realized: Vec<Option<T>>,
    /// One-period returns of this period when the dataset carries them.
    pub period_returns: Option<Vec<Option<T>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RunResult<T: Scalar> {
    pub mode: Balancing,
    pub seed: u64,
    pub horizon: usize,
    pub stride: usize,
    pub steps: Vec<StepTrace<T>>,
    pub store: MemoryStore<T>,
    pub history: ErrorHistory<T>,
}

fn mae<T: Scalar>(f: &[T], y: &[Option<T>]) -> Option<T> {
    let mut s = T::zero();
    let mut n = 0;
    for (a, b) in f.iter().zip(y) {
        if let Some(b) = b {
            s += (*a - *b).abs();
            n += 1;
        }
    }
    (n > 0).then(|| s / T::from_count(n))
}

impl<T: Scalar> RunResult<T> {
    /// Out-of-sample mean absolute error of the blended and base forecasts
    /// over non-warm-up steps with observable targets.
    pub fn mae(&self) -> Option<(T, T)> {
        let (mut c, mut b, mut n) = (T::zero(), T::zero(), 0);
        for s in self.steps.iter().filter(|s| !s.warmup) {
            if let (Some(ec), Some(eb)) = (mae(&s.forecasts, &s.realized), mae(&s.base_forecasts, &s.realized)) {
                c += ec;
                b += eb;
                n += 1;
            }
        }
        (n > 0).then(|| (c / T::from_count(n), b / T::from_count(n)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// `period,security_id,forecast,base_forecast,realized` rows.
    pub fn write_forecast_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["period", "security_id", "forecast", "base_forecast", "realized"])?;
        for s in &self.steps {
            for i in 0..s.securities.len() {
                w.write_record([
                    s.period.clone(),
                    s.securities[i].clone(),
                    s.forecasts[i].to_string(),
                    s.base_forecasts[i].to_string(),
                    s.realized[i].map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Walk-forward state over one dataset.
pub struct Engine<'a, T: Scalar> {
    data: &'a Dataset<T>,
    cfg: EngineConfig,
    /// Winsorized raw features per period.
    raw: Vec<Array2<T>>,
    snapshots: Vec<ModelColumn<T>>,
    store: Option<MemoryStore<T>>,
    cache: ReplayCache<T>,
    history: ErrorHistory<T>,
    jcrit: Option<T>,
    traces: Vec<StepTrace<T>>,
    next: usize,
    burn_in: usize,
}

impl<'a, T: Scalar> Engine<'a, T> {
    pub fn new(data: &'a Dataset<T>, cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        if data.n_periods() < cfg.min_periods() {
            return Err(ClaError::InsufficientPeriods { needed: cfg.min_periods(), got: data.n_periods() });
        }
        let raw = data
            .features
            .iter()
            .enumerate()
            .map(|(t, x)| match cfg.winsorize {
                Some([lo, hi]) => winsorize(x.view(), T::lit(lo), T::lit(hi)).map_err(|e| e.at_period(&data.periods[t])),
                None => Ok(x.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            jcrit: cfg.fixed_jcrit.map(T::lit),
            next: cfg.first_step(),
            burn_in: cfg.burn_in_for(data.n_periods()),
            data,
            cfg,
            raw,
            snapshots: Vec::new(),
            store: None,
            cache: ReplayCache::default(),
            history: ErrorHistory::default(),
            traces: Vec::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn store(&self) -> Option<&MemoryStore<T>> {
        self.store.as_ref()
    }

    pub fn replay_cache(&self) -> &ReplayCache<T> {
        &self.cache
    }

    pub fn history(&self) -> &ErrorHistory<T> {
        &self.history
    }

    pub fn jcrit(&self) -> Option<T> {
        self.jcrit
    }

    fn uses_memory(&self) -> bool {
        self.cfg.mode != Balancing::Base
    }

    fn train_base(&self, end: usize, row: usize) -> Result<ModelColumn<T>> {
        let start = end + 1 - self.cfg.train_window;
        let mut blocks: Vec<ArrayView2<'_, T>> = Vec::new();
        let mut raw_blocks = Vec::new();
        let mut y = Vec::new();
        for p in start..=end {
            let keep: Vec<usize> = (0..self.data.targets[p].len()).filter(|&i| self.data.targets[p][i].is_some()).collect();
            y.extend(keep.iter().map(|&i| self.data.targets[p][i].unwrap()));
            raw_blocks.push(self.raw[p].select(Axis(0), &keep));
        }
        blocks.extend(raw_blocks.iter().map(|b| b.view()));
        let stacked = concatenate(Axis(0), &blocks).map_err(|e| ClaError::InvalidArgument(e.to_string()))?;
        let context = Context::from_raw(stacked.view())?;
        let cfg = TrainConfig { seed: train_seed(self.cfg.seed, row), ..self.cfg.train.clone() };
        let outcome = base_model::train(context.features.view(), &y, &cfg)?;
        Ok(ModelColumn { params: outcome.params, context, trained_through: self.data.periods[end].clone() })
    }

    /// Runs the next step; `None` once every period has been processed.
    pub fn step(&mut self) -> Result<Option<&StepTrace<T>>> {
        if self.next >= self.data.n_periods() {
            return Ok(None);
        }
        let t = self.next;
        let period = self.data.periods[t].clone();
        self.step_at(t).map_err(|e| e.at_period(period))?;
        self.next += 1;
        Ok(self.traces.last())
    }

    fn step_at(&mut self, t: usize) -> Result<()> {
        let h = self.cfg.horizon;
        let row = t - self.cfg.first_step();
        let observed = t - h;
        let mut eps = None;
        let mut remembered = false;

        // backward pass: the target of `observed` is now known
        if row > 0 {
            let prev = &self.snapshots[row - 1];
            let f = prev.predict_raw(self.raw[observed].view())?;
            let e = mae(&f, &self.data.targets[observed])
                .ok_or_else(|| ClaError::Empty("no observable targets in evaluated period"))?;
            eps = Some(e);
            self.history.base.push((self.data.periods[observed].clone(), e));
            self.cache.cues.push(e);
            if observed >= self.cfg.first_step() {
                let r = observed - self.cfg.first_step();
                let realized = self.data.targets[observed].clone();
                if let Some(ec) = mae(&self.traces[r].forecasts, &realized) {
                    self.history.cla.push((self.data.periods[observed].clone(), ec));
                }
                if self.uses_memory() {
                    self.cache.rows[r].realized = Some(realized);
                }
            }
            if self.uses_memory() {
                let store = self.store.as_mut().expect("store exists after first step");
                remembered = maybe_remember(store, e, self.jcrit, &self.data.periods[t])?;
            }
        }

        // retrain on the newest observable window
        let column = self.train_base(observed, row)?;
        self.snapshots.push(column.clone());
        match self.store.as_mut() {
            Some(store) => store.set_base(column, row),
            None => self.store = Some(MemoryStore::new(column, row, self.cfg.capacity)),
        }

        let mut evicted = Vec::new();
        if self.uses_memory() {
            if self.cfg.fixed_jcrit.is_none() && self.history.base.len() >= 2 && self.cache.rows.iter().any(|r| r.realized.is_some()) {
                let rc = ReplayConfig { mode: self.cfg.mode, capacity: self.cfg.capacity, window: self.cfg.replay_window };
                self.jcrit = Some(learn_jcrit(&self.history, &self.cache, &rc)?.value);
            }
            evicted = forget(self.store.as_mut().unwrap());
        }

        // forward pass
        let x_raw = self.raw[t].view();
        // the query is standardized with the live base window's statistics
        let query = self.store.as_ref().expect("base trained").base.context.stats.apply(x_raw)?;
        let x_query = query.view();
        let seed = self.cfg.seed;
        let dtw = &self.cfg.dtw;
        let evaluate = |k: usize, col: &ModelColumn<T>| -> Result<CachedColumn<T>> {
            let forecasts = col.predict_raw(x_raw)?;
            let mut r = rng::stream(seed, domain::DISTANCE, k as u32, row as u32);
            let distance = expected_distance(col.context.features.view(), x_query, dtw, &mut r)?;
            Ok(CachedColumn { forecasts, distance })
        };
        let uses_memory = self.uses_memory();
        let cached: Vec<CachedColumn<T>> = if uses_memory {
            self.snapshots.par_iter().enumerate().map(|(k, c)| evaluate(k, c)).collect::<Result<_>>()?
        } else {
            vec![evaluate(row, &self.snapshots[row])?]
        };
        let base_cached = cached.last().unwrap();
        let store = self.store.as_mut().unwrap();
        let mut cols = vec![Column { forecasts: &base_cached.forecasts, distance: base_cached.distance, created: row as u64 }];
        if uses_memory {
            for m in &store.memories {
                let c = &cached[m.id];
                cols.push(Column { forecasts: &c.forecasts, distance: c.distance, created: m.id as u64 });
            }
        }
        let (forecasts, weights) = balance(self.cfg.mode, &cols)?;
        for (m, w) in store.memories.iter_mut().zip(&weights[1..]) {
            m.recall_weight += *w;
        }
        let mut columns = vec![ColumnTrace {
            id: row,
            is_base: true,
            context_period: store.base.trained_through.clone(),
            distance: base_cached.distance,
            weight: weights[0],
        }];
        for (m, (c, w)) in store.memories.iter().zip(cols[1..].iter().zip(&weights[1..])) {
            columns.push(ColumnTrace {
                id: m.id,
                is_base: false,
                context_period: m.column.trained_through.clone(),
                distance: c.distance,
                weight: *w,
            });
        }
        let mut winner = 0;
        for i in 1..columns.len() {
            if columns[i].weight > columns[winner].weight {
                winner = i;
            }
        }
        let base_forecasts = base_cached.forecasts.clone();
        let trace = StepTrace {
            step: row,
            period: self.data.periods[t].clone(),
            warmup: t < self.burn_in,
            winner: columns[winner].id,
            columns,
            remembered,
            error_period: (row > 0).then(|| self.data.periods[observed].clone()),
            eps,
            jcrit: self.jcrit,
            evicted,
            securities: self.data.securities[t].clone(),
            forecasts,
            base_forecasts,
            realized: Vec::new(),
            period_returns: None,
        };
        if uses_memory {
            self.cache.push_row(ReplayRow { period: trace.period.clone(), columns: cached, realized: None })?;
        }
        self.traces.push(trace);
        Ok(())
    }

    /// Consumes the engine once all steps have run.
    pub fn finish(mut self) -> Result<RunResult<T>> {
        while self.step()?.is_some() {}
        let first = self.cfg.first_step();
        for (r, s) in self.traces.iter_mut().enumerate() {
            let t = first + r;
            s.realized = self.data.targets[t].clone();
            s.period_returns = self.data.returns.as_ref().map(|ret| ret[t].clone());
        }
        Ok(RunResult {
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            horizon: self.cfg.horizon,
            stride: self.cfg.stride,
            steps: self.traces,
            store: self.store.expect("at least one step ran"),
            history: self.history,
        })
    }
}

/// Runs every step over `data`.
pub fn run<T: Scalar>(data: &Dataset<T>, cfg: &EngineConfig) -> Result<RunResult<T>> {
    Engine::new(data, cfg.clone())?.finish()
}
