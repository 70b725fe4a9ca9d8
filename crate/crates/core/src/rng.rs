//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit seed. Independent sub-streams
//! (one per Monte-Carlo trial, per tomography setting, ...) are derived from
//! `(seed, index)` so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// The random stream for `(seed, index)`.
pub fn stream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
