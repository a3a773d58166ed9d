//! Named random substreams.
//!
//! Every source of randomness draws from its own ChaCha8 stream derived from
//! a party seed and a fixed stream number, so adding or removing one consumer
//! never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub mod streams {
    pub const ALICE_BITS: u64 = 0;
    pub const ALICE_BASES: u64 = 1;
    /// Seeds Alice announces on the public channel.
    pub const ALICE_PUBLIC: u64 = 2;
    pub const BOB_CHOICES: u64 = 0;
    pub const SOURCE: u64 = 0;
    pub const FIBER: u64 = 1;
    pub const BOB_ROUTING: u64 = 2;
    pub const BOB_DARKS: u64 = 3;
    pub const EVE: u64 = 0;
    pub const PREPARED_POOL: u64 = 7;
}

pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for parallel lane `lane` of a run seeded with `seed`, drawn from a
/// stream reserved for lane derivation so that nearby seeds and lanes never
/// share draws.
pub fn lane_seed(seed: u64, lane: u64) -> u64 {
    use rand::Rng;
    stream(seed, LANE_STREAM_BASE | lane).random()
}

const LANE_STREAM_BASE: u64 = 1 << 63;

/// Independent seeds for the parties and the physical channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Seeds {
    pub alice: u64,
    pub bob: u64,
    pub eve: u64,
    pub channel: u64,
}

impl Seeds {
    /// Derives all four seeds from one master seed.
    pub fn from_master(seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            alice: rng.random(),
            bob: rng.random(),
            eve: rng.random(),
            channel: rng.random(),
        }
    }
}
