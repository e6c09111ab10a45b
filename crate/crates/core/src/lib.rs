//! Continual learning augmentation for cross-sectional forecasting.
//!
//! A feed-forward base model is retrained every period. When its error on a
//! newly observable period spikes above a learned threshold, the outgoing
//! model and its training context are frozen into an explicit memory.
//! Forecasts blend the base model with the remembered models, weighted by
//! how closely each training context resembles the current one under a
//! sampled dynamic-time-warping distance.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64` and
//! `*32` aliases below fix the precision.

pub mod backtest;
pub mod base_model;
pub mod data;
pub mod engine;
pub mod error;
pub mod memory;
pub mod recall;
pub mod rng;
pub mod scalar;
pub mod similarity;

pub use error::{ClaError, Result};
pub use scalar::Scalar;

pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type BaseParams64 = base_model::BaseParams<f64>;
pub type BaseParams32 = base_model::BaseParams<f32>;
pub type MemoryStore64 = memory::MemoryStore<f64>;
pub type MemoryStore32 = memory::MemoryStore<f32>;
pub type RunResult64 = engine::RunResult<f64>;
pub type RunResult32 = engine::RunResult<f32>;
pub type StepTrace64 = engine::StepTrace<f64>;
pub type PerfStats64 = backtest::PerfStats<f64>;
pub type Engine64<'a> = engine::Engine<'a, f64>;
pub type Engine32<'a> = engine::Engine<'a, f32>;
