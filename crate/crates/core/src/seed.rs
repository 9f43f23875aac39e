//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator whose seed is
//! derived from a base seed and a label, so results never depend on the
//! order in which streams are created or which thread consumes them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a seed from `base` and a string label (e.g. a layer name).
pub fn derive(base: u64, label: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    mix64(base ^ mix64(h))
}

/// Derives a seed from `base` and an integer key (e.g. an image id).
pub fn derive_index(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index.wrapping_add(0x6a09_e667_f3bc_c909)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
