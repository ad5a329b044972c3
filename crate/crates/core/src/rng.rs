//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit `u64` seed. Independent
//! sub-streams are derived by mixing a tag into the seed so that, e.g., the
//! edge sampling of a graph never shares draws with its weight sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream(seed: u64, tag: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}

/// Stream tags, kept in one place so collisions are visible.
pub mod tags {
    pub const EI_LABELS: u64 = 1;
    pub const EDGES: u64 = 2;
    pub const INPUT_EDGES: u64 = 3;
    pub const NEURON_PARAMS: u64 = 4;
    pub const STDP_PARAMS: u64 = 5;
    pub const ENCODER: u64 = 6;
    pub const LYAPUNOV: u64 = 7;
    pub const PRUNE: u64 = 8;
    pub const DELOCALIZE: u64 = 9;
    pub const TIMESCALE: u64 = 10;
    pub const BO: u64 = 11;
    pub const TASK: u64 = 12;
    pub const READOUT: u64 = 13;
    pub const SIGNAL: u64 = 14;
    pub const INITIAL_STATE: u64 = 15;
}
