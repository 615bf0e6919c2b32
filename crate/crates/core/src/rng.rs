//! Seeded random streams.
//!
//! A run is identified by one `u64` seed. Each consumer (dataset generation,
//! parameter init, batch shuffling, diagnostics) draws from its own ChaCha
//! stream so that changing how much one consumer draws never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator type used everywhere in the crate.
pub type SbiRng = ChaCha8Rng;

/// Independent consumers of randomness within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Dataset,
    TestSet,
    Init,
    Shuffle,
    Diagnostics,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Dataset => 1,
            Stream::TestSet => 2,
            Stream::Init => 3,
            Stream::Shuffle => 4,
            Stream::Diagnostics => 5,
        }
    }
}

/// Deterministic generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: Stream) -> SbiRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
