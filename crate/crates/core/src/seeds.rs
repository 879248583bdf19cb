// SPDX-License-Identifier: Apache-2.0

//! Stable seed derivation. Every random stream in a run is derived from the
//! master seed through these functions, so adding a consumer never shifts
//! another consumer's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a seed with a numeric stream tag.
#[inline]
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag))
}

/// FNV-1a over bytes, finalized with [`mix64`].
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(h)
}

/// Combine a seed with a string label (stream names, variant ids).
pub fn derive_str(seed: u64, label: &str) -> u64 {
    derive(seed, hash_bytes(label.as_bytes()))
}

/// Hash of a slice of reals by their bit patterns.
pub fn hash_reals(values: &[f64]) -> u64 {
    let mut h = 0x51_7c_c1_b7_27_22_0a_95u64;
    for v in values {
        h = derive(h, v.to_bits());
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
