//! Seeded random streams.
//!
//! Every generator in this crate draws from ChaCha20 keyed by a `u64` seed,
//! with independent purposes separated by the cipher's stream id rather
//! than by reseeding. Results are identical across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Identifier written into fixtures and results.
pub const RNG_ALGORITHM: &str = "chacha20";

/// Stream ids reserved for each purpose.
pub mod streams {
    pub const POINTS: u64 = 0;
    pub const MASK: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const CHAIN: u64 = 3;
    pub const MAP_INIT: u64 = 4;
    pub const SELECTION: u64 = 5;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer. A bijection on `u64`, so distinct inputs never collide.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
