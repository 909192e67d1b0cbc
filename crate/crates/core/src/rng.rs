//! Counter-based deterministic RNG streams.
//!
//! Every random decision in the crate draws from a stream keyed by a global
//! seed plus a purpose tag and counters (e.g. `(seed, "episode", index)`).
//! Streams are independent of worker count and arrival order, which is what
//! makes parallel episode construction reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step; the standard finalizer used to decorrelate seed words.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a ChaCha stream from a seed and a list of tag words.
///
/// Tag words are usually a short ASCII purpose tag (see [`tag`]) followed by
/// counters such as an episode or fold index.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    for &t in tags {
        let mut word = t;
        state = splitmix64(&mut state) ^ splitmix64(&mut word);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Packs up to 8 ASCII bytes into a tag word.
pub const fn tag(name: &str) -> u64 {
    let bytes = name.as_bytes();
    let mut out = 0u64;
    let mut i = 0;
    while i < bytes.len() && i < 8 {
        out |= (bytes[i] as u64) << (i * 8);
        i += 1;
    }
    out
}
