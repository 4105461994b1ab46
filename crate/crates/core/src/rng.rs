//! Seeded random streams.
//!
//! Every random decision in an episode draws from a ChaCha stream derived
//! from the episode seed and a fixed stream id, so two runs that differ only
//! in a flag (for example compliance on or off) see the same grasps, the
//! same clearance poses and the same slip draws.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;
use rand_distr::{Distribution, StandardNormal};

pub mod stream {
    pub const PLAN: u64 = 1;
    pub const WORLD: u64 = 2;
    pub const SLIP: u64 = 3;
    pub const CLEARANCE: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const HUMAN: u64 = 6;
    pub const POLICY: u64 = 7;
    pub const TRAIN: u64 = 8;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One draw from N(0, 1).
#[inline]
pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Mixes a base seed with an index; used to derive per-episode seeds.
pub fn mix(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
