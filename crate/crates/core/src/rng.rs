//! Keyed random streams.
//!
//! Every random draw in a simulation comes from a ChaCha8 stream addressed by
//! `(seed, stream, counter)`: the seed selects the key, the stream id selects
//! the ChaCha nonce and the counter positions the block counter. Draws for
//! agent `k` at iteration `i` never depend on how many numbers other agents or
//! earlier iterations consumed, so agents can be advanced in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Words reserved per counter value. One iteration of one agent never needs
/// more than 2^32 32-bit words.
const WORDS_PER_COUNTER: u128 = 1 << 32;

/// Reserved stream ids for problem generation; agent streams use the agent id.
pub mod streams {
    pub const PROBLEM: u64 = 1 << 40;
    pub const CONSTRAINTS: u64 = (1 << 40) + 1;
}

/// SplitMix64 finalizer, used to spread user seeds over the key space.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key(seed: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut s = seed;
    for chunk in out.chunks_mut(8) {
        s = mix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    out
}

/// Generator positioned at `(seed, stream, counter)`.
pub fn keyed(seed: u64, stream: u64, counter: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::from_seed(key(seed));
    rng.set_stream(stream);
    rng.set_word_pos(counter as u128 * WORDS_PER_COUNTER);
    rng
}

/// Stream for the gradient sample of `agent` at `iteration`.
pub fn agent_stream(seed: u64, agent: usize, iteration: u64) -> StreamRng {
    keyed(seed, agent as u64, iteration)
}
