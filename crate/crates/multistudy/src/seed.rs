//! Deterministic derivation of random-number substreams.
//!
//! Every stochastic routine in the crate draws from a ChaCha stream whose seed
//! is a pure function of a master seed and a small number of index words.
//! Results are therefore byte-identical regardless of evaluation order or
//! thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step: increments by the golden-ratio constant and finalizes.
/// Bijective on `u64`, so distinct inputs never collide within one stage.
#[inline]
pub fn mix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of substream `(lane, index)` under `master`.
pub fn stream_seed(master: u64, lane: u64, index: u64) -> u64 {
    mix64(mix64(mix64(master) ^ lane) ^ index)
}

/// ChaCha generator for substream `(lane, index)` under `master`.
pub fn stream_rng(master: u64, lane: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, lane, index))
}
