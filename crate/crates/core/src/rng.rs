//! Counter-style RNG streams keyed by integer paths.
//!
//! A path such as `[seed, stream::PERTURB, round, child]` is folded through
//! SplitMix64 into a ChaCha8 seed, so any component can draw from its own
//! stream without coordinating with siblings. Streams are independent of
//! evaluation order, which keeps parallel runs bit-identical to serial ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named substreams under a top-level seed.
pub mod stream {
    pub const PRIOR: u64 = 0x5052_494f;
    pub const SUITE: u64 = 0x5355_4954;
    pub const INIT_NOISE: u64 = 0x494e_4954;
    pub const PERTURB: u64 = 0x5045_5254;
    pub const SDE: u64 = 0x5344_4500;
    pub const WEIGHTS: u64 = 0x5747_5453;
    pub const INSTANCE: u64 = 0x494e_5354;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a path into a single 64-bit key.
pub fn derive_seed(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Deterministic generator for the stream identified by `path`.
pub fn stream_rng(path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(path))
}

/// Per-item seed under a top-level seed, e.g. one per suite instance.
pub fn item_seed(seed: u64, index: u64) -> u64 {
    derive_seed(&[seed, stream::INSTANCE, index])
}
