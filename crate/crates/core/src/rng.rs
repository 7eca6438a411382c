//! Seed derivation.
//!
//! Every Monte-Carlo run gets its own seed from `(base_seed, run_index)`, and
//! every random role inside a run (channel, each device's Tx draws, the
//! attacker's estimates, key generation) reads from its own ChaCha stream.
//! Adding or removing draws in one role therefore never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `index` under `base_seed`: `splitmix64(base + (index + 1) * gamma)`.
pub fn run_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Independent random roles within one pairing run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Channel = 1,
    TxA = 2,
    TxB = 3,
    Attacker = 4,
    Keys = 5,
    AttackerChannel = 6,
    AttackerEstimate = 7,
}

/// A ChaCha20 generator for one role of one run.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
