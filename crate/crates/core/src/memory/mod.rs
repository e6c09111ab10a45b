//! The explicit memory: model columns, the remember cue, forgetting, and the
//! grid search that learns the remember threshold.

mod jcrit;
mod store;

pub use jcrit::{build_jgrid, learn_jcrit, replay_error, CachedColumn, JCritChoice, JGrid, ReplayCache, ReplayConfig, ReplayRow};
pub use store::{forget, maybe_remember, Context, ErrorHistory, MemoryStore, ModelColumn, ModelMemory};
