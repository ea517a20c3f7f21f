//! Seed plumbing. Every random draw in the crate comes from a ChaCha stream
//! addressed by `(seed, index)`, so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `index` of generator `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed from a parent seed and a label (splitmix64 finalizer
/// over an FNV-1a hash of the label).
pub fn derive(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(seed ^ h)
}

/// Derives a child seed from a parent seed and an integer.
pub fn derive_index(seed: u64, index: u64) -> u64 {
    mix(seed.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(1))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = stream(1, 0).random();
        let b: u64 = stream(1, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, stream(1, 0).random::<u64>());
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive(5, "touch"), derive(5, "chart"));
        assert_eq!(derive(5, "touch"), derive(5, "touch"));
        assert_ne!(derive_index(5, 0), derive_index(5, 1));
    }
}
