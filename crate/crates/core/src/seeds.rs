//! Counter-based seed derivation.
//!
//! Every random stream in the crate is derived from a single master seed and
//! a path of integer labels, so work can be split across threads without the
//! results depending on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a stream label.
pub fn derive(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Derive along a path of labels.
pub fn derive_path(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &l| derive(s, l))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Stream tags kept distinct so that unrelated consumers never share a stream.
pub(crate) mod tag {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const ITERATION: u64 = 3;
    pub const POOL: u64 = 4;
    pub const GATE_INIT: u64 = 5;
    pub const PERMUTATION: u64 = 6;
    pub const REPEAT: u64 = 8;
    pub const CORRUPT: u64 = 9;
    pub const SHUFFLE: u64 = 10;
}
