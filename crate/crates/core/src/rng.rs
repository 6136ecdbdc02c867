//! Seeded RNG streams. A master seed fans out into named sub-streams via
//! ChaCha's counter-based stream selection, so enabling or disabling one
//! stage never shifts the draws of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stages that own an independent RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Corruption,
    Init,
    Shuffle,
    Dropout,
    Probe,
    Synthetic,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Corruption => 1,
            Stream::Init => 2,
            Stream::Shuffle => 3,
            Stream::Dropout => 4,
            Stream::Probe => 5,
            Stream::Synthetic => 6,
        }
    }
}

/// RNG for one (master seed, stage) pair.
pub fn stream(master_seed: u64, stage: Stream) -> Rng {
    stream_indexed(master_seed, stage, 0)
}

/// RNG for one (master seed, stage, repeat) triple. Repeats of a run draw
/// from disjoint streams without touching the master seed.
pub fn stream_indexed(master_seed: u64, stage: Stream, repeat: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stage.id() + 16 * repeat);
    rng
}
