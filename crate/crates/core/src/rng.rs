//! Seeded random streams.
//!
//! Every stochastic component of a run draws from its own ChaCha stream so
//! that adding draws in one component never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent stream identifiers used by the runner and trainers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Maze = 1,
    Pursuit = 2,
    Explore = 3,
    Subgoal = 4,
    Learner = 5,
    Eval = 6,
    Skills = 7,
    Desired = 8,
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
