//! Fixtures shared by the criterion benchmarks in `benches/`.

use geaps_core::env::{generate_maze, Cell, GaMdpSpec, Goal, MazeSpec, Point};
use rand::Rng;

/// A 10x10 task maze with the default loop probability.
pub fn task_spec(seed: u64) -> GaMdpSpec {
    GaMdpSpec::new(generate_maze(seed, 10, 10, 0.2), 50, 0.98).expect("valid task maze")
}

/// Open `n`x`n` maze started at its centre.
pub fn open_spec(n: usize) -> GaMdpSpec {
    let c = (n / 2) as i32;
    GaMdpSpec::new(MazeSpec::open(n, n, Cell::new(c, c)).expect("valid size"), 50, 0.98).expect("valid spec")
}

pub fn random_goals<R: Rng>(n: usize, extent: f64, rng: &mut R) -> Vec<Goal> {
    (0..n).map(|_| Point::new(rng.gen::<f64>() * extent, rng.gen::<f64>() * extent)).collect()
}
