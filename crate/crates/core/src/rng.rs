//! Seed derivation for independent deterministic RNG streams.
//!
//! Every consumer of randomness (env instance, trainer shuffle, snapshot bank,
//! eval episode, ...) gets its own ChaCha8 stream derived from a global seed
//! plus a purpose label, so adding a draw in one place never shifts another
//! stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit mix (splitmix64 finalizer). Not cryptographic; only used to
/// spread (seed, label, index) triples into distinct stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = mix(seed);
    for &b in label.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ index)
}

pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, label, index))
}

/// Stateless hash of an integer tuple to `[0, 1)`. Used for fixed
/// pseudo-random content (texture patterns, category embeddings) that must be
/// a pure function of its key, independent of any RNG stream position.
pub fn hash01(parts: &[u64]) -> f64 {
    let mut h = 0x243f_6a88_85a3_08d3; // arbitrary non-zero start
    for &p in parts {
        h = mix(h ^ p);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Fold a stream of u64 words into a single digest word (for state digests in
/// episode logs). Same mixer as the stream seeds.
pub fn fold_digest(parts: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15;
    for p in parts {
        h = mix(h ^ p);
    }
    h
}
