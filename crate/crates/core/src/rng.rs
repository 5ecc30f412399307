//! Counter-based derivation of independent random streams.
//!
//! Every consumer of randomness gets its own [`StreamKey`], derived from the
//! master seed by a path of indices (outer replicate, chain, step, ...). The
//! key is hashed into a ChaCha8 seed, so any chain can be replayed in
//! isolation and results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    state: [u64; 2],
}

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        let a = splitmix64(master_seed);
        let b = splitmix64(a ^ 0x5bd1_e995_0000_0001);
        StreamKey { state: [a, b] }
    }

    /// Derive the stream for sub-task `index`.
    pub fn child(self, index: u64) -> Self {
        let [a, b] = self.state;
        let x = splitmix64(a ^ splitmix64(index.wrapping_add(GOLDEN)));
        let y = splitmix64(b.rotate_left(17) ^ x ^ index);
        StreamKey { state: [x, y] }
    }

    pub fn rng(self) -> StreamRng {
        let [a, b] = self.state;
        let mut seed = [0u8; 32];
        let words = [
            splitmix64(a),
            splitmix64(b),
            splitmix64(a ^ b.rotate_left(32)),
            splitmix64(b ^ GOLDEN),
        ];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
