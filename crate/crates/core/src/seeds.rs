//! One run seed fanned out into independent ChaCha streams.
//!
//! | stream | consumer                         |
//! |--------|----------------------------------|
//! | 1      | dataset split                    |
//! | 2      | parameter initialization         |
//! | 3      | target noise                     |
//! | 4      | per-epoch shuffling of train set |

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    Init = 2,
    Noise = 3,
    Shuffle = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Scalar sub-seed for APIs that take a `u64`.
pub fn sub_seed(seed: u64, stream: Stream) -> u64 {
    stream_rng(seed, stream).next_u64()
}

/// Seed, stream and position of a generator: 32 + 8 + 16 bytes, little-endian.
pub fn rng_state_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = rng.get_seed().to_vec();
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

pub fn rng_from_state_bytes(bytes: &[u8]) -> Option<ChaCha8Rng> {
    if bytes.len() != 56 {
        return None;
    }
    let seed: [u8; 32] = bytes[..32].try_into().ok()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(bytes[32..40].try_into().ok()?));
    rng.set_word_pos(u128::from_le_bytes(bytes[40..56].try_into().ok()?));
    Some(rng)
}
