//! Seed derivation shared by every randomized stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed for the work on one image: a function of the run seed and the image
/// id only, so results do not depend on scheduling.
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    let mut z = seed ^ fnv1a(image_id.as_bytes()).rotate_left(29);
    // SplitMix64 finalizer.
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn image_rng(seed: u64, image_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(image_seed(seed, image_id))
}
