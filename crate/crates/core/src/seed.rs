//! Seed derivation. Every stochastic step gets its own stream, derived from a
//! master seed and the coordinates of the task, so results do not depend on
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive, platform-independent hash of task coordinates.
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = 0x6A09_E667_F3BC_C909_u64;
    for &w in words {
        h = splitmix64(h ^ splitmix64(w));
    }
    h
}

/// `master ⊕ hash(words)`.
pub fn derive(master: u64, words: &[u64]) -> u64 {
    master ^ hash_words(words)
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Word for a real-valued coordinate.
pub fn real(x: f64) -> u64 {
    x.to_bits()
}
