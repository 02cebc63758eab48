//! Seed fan-out.
//!
//! A run is driven by one master seed. Each pipeline stage draws its own seed
//! as `splitmix64(master + GOLDEN * (stage as u64 + 1))`, so any stage can be
//! re-run in isolation with exactly the randomness it saw inside a full run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Pipeline stages that consume randomness, in counter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Init = 0,
    Shuffle = 1,
    Prune = 2,
    Quantize = 3,
    Noise = 4,
    Labels = 5,
    Synthetic = 6,
    Subset = 7,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stage_seed(master: u64, stage: Stage) -> u64 {
    splitmix64(master.wrapping_add(GOLDEN.wrapping_mul(stage as u64 + 1)))
}

/// Sub-seed for the `index`-th independent unit inside a stage (sweep cell, draw).
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
