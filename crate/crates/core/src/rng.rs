//! Seed derivation. Every random draw in the crate comes from a generator
//! built here from an explicit `(seed, stream)` pair, so independent
//! consumers never share RNG state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for a named stream under `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(splitmix(seed ^ splitmix(fnv1a(name))))
}

/// Generator for a named stream, further keyed by an integer such as an epoch.
pub fn substream(seed: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(splitmix(splitmix(seed ^ splitmix(fnv1a(name))) ^ index))
}

/// A child seed for a named, indexed consumer.
pub fn derive(seed: u64, name: &str, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(fnv1a(name))) ^ splitmix(index))
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, "x").random();
        let b: u64 = stream(7, "x").random();
        let c: u64 = stream(7, "y").random();
        let d: u64 = substream(7, "x", 1).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
