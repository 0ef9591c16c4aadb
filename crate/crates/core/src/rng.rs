//! Seeded random streams.
//!
//! Every random decision in the crate draws from a [`SfsRng`] built from an
//! explicit seed, so runs are reproducible across machines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SfsRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SfsRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a base seed and a purpose tag.
pub fn derived(seed: u64, stream: u64) -> SfsRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
