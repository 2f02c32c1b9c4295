//! Reproducible random streams.
//!
//! Every simulation run, particle or resampling event draws from its own
//! ChaCha stream, addressed by `(master seed, stream id)`. Results then do
//! not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids at or above this offset are reserved for resampling draws.
pub const RESAMPLE_STREAM_BASE: u64 = 1 << 62;
/// Stream ids at or above this offset are reserved for initial-state draws.
pub const INIT_STREAM_BASE: u64 = 1 << 61;

pub fn stream(master: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id);
    rng
}

/// Exponential waiting time with the given total rate.
#[inline]
pub fn exponential<R: rand::Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    // 1 - u lies in (0, 1], so the log is finite
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}
