//! Seed derivation and the crate-wide PRNG.
//!
//! All randomness flows through [`Prng`], which is ChaCha8 as implemented by
//! `rand_chacha` 0.9. Child seeds are derived from a parent seed and a list
//! of integer tags with the SplitMix64 finalizer, so every task can build its
//! own stream without depending on scheduling order.

use rand::SeedableRng;

pub type Prng = rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `tags` into `seed`. Order matters.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn prng(seed: u64, tags: &[u64]) -> Prng {
    Prng::seed_from_u64(derive_seed(seed, tags))
}
