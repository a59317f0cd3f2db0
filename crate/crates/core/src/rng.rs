//! Seed derivation. Every consumer of randomness in a run gets its own ChaCha
//! stream derived from the run seed, so adding draws in one place never shifts
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Explore = 2,
    Replay = 3,
    Episodes = 4,
    Eval = 5,
    GateInit = 6,
    GateReplay = 7,
    GateEpisodes = 8,
}

pub fn stream(seed: u64, which: Stream) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Episode seeds for the environment's noise process.
pub fn episode_seed(seed: u64, which: Stream, episode: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(which as u64);
    rng.set_word_pos(u128::from(episode) * 16);
    rand::RngCore::next_u64(&mut rng)
}
