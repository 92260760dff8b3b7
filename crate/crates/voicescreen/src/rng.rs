//! Seed derivation and deterministic RNG streams.
//!
//! Every stochastic choice in the toolkit (corpus sampling, batch shuffling,
//! clip windows, dropout masks, parameter init) draws from a `ChaCha8Rng`
//! seeded by mixing a run seed with the logical coordinates of the choice
//! (epoch, batch, voice position, layer, ...). Streams therefore depend only
//! on *what* is being computed, never on thread scheduling, which is what
//! makes `--threads N` output-identical to the serial reference.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit hash; stable, dependency-free fingerprint for strings.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mix a sequence of u64 words into one seed (splitmix64 finalizer per word).
pub fn mix(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &w in words {
        let mut z = h ^ w.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Deterministic RNG for the stream identified by `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut words = Vec::with_capacity(tags.len() + 1);
    words.push(seed);
    words.extend_from_slice(tags);
    ChaCha8Rng::seed_from_u64(mix(&words))
}

/// Salts naming the independent random streams of the toolkit.
pub mod salt {
    pub const VOICE_PROFILE: u64 = 1;
    pub const LABELS: u64 = 2;
    pub const UTTERANCE: u64 = 3;
    pub const LEXICAL: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const PARAM_INIT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const CLIP_WINDOW: u64 = 8;
    pub const DROPOUT: u64 = 9;
    pub const PROJECTION: u64 = 10;
    pub const GRADCHECK: u64 = 11;
    pub const DURATION: u64 = 12;
}
