//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`Prng`], ChaCha with 8
//! rounds as implemented by `rand_chacha`, whose output stream is fixed
//! across platforms. Work split across items (sentences, bootstrap
//! resamples) uses [`derive_seed`] so results do not depend on scheduling.

use rand::SeedableRng;

pub type Prng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// SplitMix64 finalizer over `seed` and `index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derived(seed: u64, index: u64) -> Prng {
    seeded(derive_seed(seed, index))
}
