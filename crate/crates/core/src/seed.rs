//! Root-seed expansion.
//!
//! Every random stage draws from `ChaCha8Rng::seed_from_u64(derive(root, STAGE))`
//! where `derive` is two rounds of SplitMix64 over `root` and the stage
//! counter. Stages nest: a stage seed can be used as the root of sub-stages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Root seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_220_829;

pub mod stage {
    pub const GENERATE: u64 = 1;
    pub const HISTORY: u64 = 2;
    pub const EVALUATION: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const OUTCOMES: u64 = 5;

    // inside training
    pub const INIT: u64 = 16;
    pub const SPLIT: u64 = 17;
    pub const SHUFFLE: u64 = 18;
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive(root: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(root) ^ counter)
}

pub fn rng(root: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, counter))
}
