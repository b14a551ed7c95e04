//! Seed plumbing. Every stochastic routine takes an explicit `u64` seed; child
//! streams are derived with a SplitMix64 finalizer so that parallel work gets
//! reproducible, well-separated sub-seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a stream index.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ splitmix64(stream.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Order-sensitive hash of a sequence of floats, used to key sub-seeds on
/// content rather than position.
pub fn hash_f64s(values: impl IntoIterator<Item = f64>) -> u64 {
    values
        .into_iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, v| splitmix64(acc ^ v.to_bits()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, 0));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn content_hash_sees_order() {
        assert_ne!(hash_f64s([1.0, 2.0]), hash_f64s([2.0, 1.0]));
        assert_eq!(hash_f64s([1.0, 2.0]), hash_f64s(vec![1.0, 2.0]));
    }
}
