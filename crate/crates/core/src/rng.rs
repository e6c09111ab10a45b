//! Deterministic random streams.
//!
//! Every stochastic draw in a run comes from a ChaCha stream keyed by the run
//! seed plus a stream id, so independent draws can be evaluated in any order
//! (or in parallel) and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream-id namespaces so different consumers of one seed never collide.
pub mod domain {
    pub const DISTANCE: u64 = 0x1;
    pub const TRAIN: u64 = 0x2;
    pub const SYNTH: u64 = 0x3;
}

/// A generator for `seed` positioned on stream `(domain, a, b)`.
pub fn stream(seed: u64, domain: u64, a: u32, b: u32) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 60) | ((a as u64 & 0x0FFF_FFFF) << 32) | b as u64);
    rng
}

/// Seed of the `index`-th run derived from a master seed by a fixed counter offset.
pub fn run_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(index)
}
