//! Deterministic random streams keyed by (seed, purpose, node, round).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one well-mixed seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_0F4E57u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Private stream of one node for one purpose and round.
pub fn node_stream(seed: u64, purpose: u64, node: usize, round: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(mix(&[seed, purpose, node as u64, round]))
}

/// Stream shared by a whole computation step (used for sampling that is
/// conceptually done independently by every node but simulated in one pass).
pub fn stream(seed: u64, purpose: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(mix(&[seed, purpose]))
}

/// Purpose tags, kept distinct so streams never collide.
pub mod purpose {
    pub const BALANCE: u64 = 1;
    pub const MULTIPLY: u64 = 2;
    pub const SEED_TOKENS: u64 = 3;
    pub const DELAYS: u64 = 4;
    pub const MARK: u64 = 5;
    pub const SPANNER_SAMPLE: u64 = 6;
    pub const CLUSTER_SAMPLE: u64 = 7;
    pub const LEVEL_SAMPLE: u64 = 8;
    pub const RESAMPLE: u64 = 9;
    pub const SUBRUN: u64 = 10;
}
