//! Seeded random streams.
//!
//! Every random draw in a run derives from a single seed through a named
//! sub-stream, so initialization, data generation and shuffling never
//! perturb each other.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Data,
    Shuffle,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Data => 2,
            Stream::Shuffle => 3,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// Stream for a sub-use of `which` (e.g. one epoch's shuffle).
pub fn substream(seed: u64, which: Stream, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(which.id());
    rng
}
