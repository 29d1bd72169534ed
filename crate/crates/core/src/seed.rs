//! Counter-based sub-seed derivation.
//!
//! Every random stream in the workbench is seeded from `(master, tag, index)`
//! so that one master seed reproduces a whole experiment, and parallel work
//! items draw from independent streams regardless of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes; stable across platforms and releases.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives the sub-seed for work item `index` in domain `tag`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let a = splitmix64(master ^ tag_hash(tag));
    splitmix64(a ^ splitmix64(index.wrapping_add(GOLDEN)))
}

/// Deterministic RNG for a sub-stream.
pub fn rng_for(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Deterministic RNG directly from a seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
