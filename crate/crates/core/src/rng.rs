//! Seedable, splittable random streams.
//!
//! Every simulated path draws from its own ChaCha8 stream keyed by
//! `(seed, stream)`, so ensemble results do not depend on how paths are
//! scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for path `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a grid-node key into a seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    let mut z = seed
        ^ key
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
