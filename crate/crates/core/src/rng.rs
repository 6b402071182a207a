//! Seed derivation. Every random stream in a run descends from one master
//! seed through a fixed label, so toggling one component never perturbs the
//! randomness of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream label.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h = splitmix64(parent);
    for b in label.as_bytes() {
        h = splitmix64(h ^ u64::from(*b));
    }
    h
}

/// Derive a child seed from a parent seed, a label and an index.
pub fn derive_indexed(parent: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive_seed(parent, label) ^ splitmix64(index))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
