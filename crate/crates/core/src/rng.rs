//! Counter-based random streams.
//!
//! Every random draw in the simulator is a pure function of a key tuple such as
//! `(base_seed, episode, arm, t)`, so episodes can run in any order or in
//! parallel and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes an ordered key into a well-mixed 64-bit word.
#[inline]
pub fn hash_key(key: &[u64]) -> u64 {
    let mut h = GOLDEN;
    for &k in key {
        h = mix64(h ^ mix64(k.wrapping_add(GOLDEN)));
    }
    h
}

/// Uniform draw in `[0, 1)` addressed by `key`.
#[inline]
pub fn uniform(key: &[u64]) -> f64 {
    // 53 high bits give every representable multiple of 2^-53.
    (hash_key(key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A seeded ChaCha stream for consumers that need a full `Rng`.
pub fn stream(key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_key(key))
}

/// Samples an index from a discrete distribution by inverse CDF.
///
/// Falls back to the last index with positive mass when rounding leaves `u`
/// above the accumulated total.
pub fn sample_discrete(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Same as [`sample_discrete`] over a sparse support list.
pub fn sample_sparse(support: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(s, p) in support {
        acc += p;
        if u < acc {
            return s;
        }
    }
    support.last().map(|&(s, _)| s).unwrap_or(0)
}
