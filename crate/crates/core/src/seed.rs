//! Stable seed derivation.
//!
//! Every random stream in a run is keyed by a path of integers hashed into the
//! base seed, so any replication can be reproduced on its own regardless of
//! which worker ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable hash of an index path.
pub fn stable_hash(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// `base ⊕ hash(path)`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    base ^ stable_hash(path)
}

pub fn rng_from(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}
