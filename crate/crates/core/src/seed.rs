//! Seed fan-out.
//!
//! A single user seed is turned into independent per-component streams as
//! `splitmix64(seed ^ fnv1a64(component))`, so adding a component never
//! perturbs the streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, component: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(component.as_bytes()))
}

/// Seed for a per-pixel stream, independent of traversal order.
pub fn pixel_seed(seed: u64, x: usize, y: usize) -> u64 {
    splitmix64(splitmix64(seed ^ (x as u64).wrapping_mul(0x9e37_79b9)) ^ y as u64)
}

pub fn rng_for(seed: u64, component: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, component))
}
