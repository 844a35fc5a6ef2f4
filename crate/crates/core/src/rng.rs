//! Deterministic random streams.
//!
//! Every consumer of randomness (partitioning, client training, dropout,
//! tuning, bootstrap) draws from its own ChaCha stream whose seed is derived
//! from the experiment seed and a tuple of integer tags. Streams never depend
//! on scheduling order, so results are identical with or without parallelism.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags, kept distinct so that derived seeds never collide by accident.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const CLIENT: u64 = 3;
    pub const TUNING: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of tags into a new 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[tag::CLIENT, 1, 0]).random();
        let b: u64 = stream(7, &[tag::CLIENT, 1, 0]).random();
        let c: u64 = stream(7, &[tag::CLIENT, 0, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
