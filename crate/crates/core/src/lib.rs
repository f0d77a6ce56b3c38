//! Goal-exploration laboratory.
//!
//! Mazes as goal-augmented MDPs, goal-density models, sub-goal selection
//! strategies, skill pre-training, skill-driven exploration, a tabular
//! goal-conditioned learner and an experiment runner, plus brute-force
//! oracles for the exploration theory on small instances.

pub mod env;
pub mod agent;
pub mod density;
pub mod error;
pub mod explore;
pub mod oracle;
pub mod rng;
pub mod runner;
pub mod skills;
pub mod subgoal;

pub use env::{
    generate_maze, generate_pretrain_suite, parse_maze, render_maze, Action, AgentObs, Cell, Dir,
    EnvState, GaMdpSpec, Goal, MazeSpec, Point, Trajectory, Wall,
};
pub use error::{Error, Result};
