//! Seeded sub-streams.
//!
//! Every randomized operation draws from a stream derived from
//! `(seed, operation name, index)`. Streams for different indices are
//! independent, so per-record work can run in any order (or in parallel)
//! and still produce the same output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Returns the generator for `(seed, op, index)`.
pub fn substream(seed: u64, op: &str, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    let a = splitmix64(seed);
    let b = splitmix64(a ^ fnv1a(op.as_bytes()));
    let c = splitmix64(b ^ index);
    let d = splitmix64(c ^ 0x5851_f42d_4c95_7f2d);
    for (chunk, word) in key.chunks_mut(8).zip([a, b, c, d]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
