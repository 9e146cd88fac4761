//! Per-(run, chain) random streams derived from the user seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream key for chain `chain` of run `run` (both 1-based or 0-based, as
/// long as callers agree). The swap stream of a run uses `chain = nchains`.
pub fn stream_seed(seed: u64, run: u64, chain: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ run) ^ chain.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn chain_rng(seed: u64, run: u64, chain: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, run, chain))
}
