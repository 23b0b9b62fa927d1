//! Named random streams split from one master seed.
//!
//! Each stream is a ChaCha8 generator keyed by the master seed with its own
//! stream id, so drawing from one stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Selection,
    Corruption,
    Synth,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Shuffle => 2,
            Stream::Selection => 3,
            Stream::Corruption => 4,
            Stream::Synth => 5,
        }
    }
}

/// Generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> StreamRng {
    stream_at(seed, stream, 0)
}

/// Generator for `stream` under `seed`, further keyed by `index` (e.g. epoch).
pub fn stream_at(seed: u64, stream: Stream, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream.id() << 48) ^ index);
    rng
}
