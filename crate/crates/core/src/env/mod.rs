//! Goal-augmented MDP over grid mazes.
//!
//! Two variants share one maze layout: a discrete gridworld whose states are
//! cells, and a continuous point-mass whose states are points inside cells.
//! Cell `(x, y)` covers `[x, x+1) × [y, y+1)`; in the discrete variant the
//! position of a cell is its integer corner `(x, y)`.

mod maze;
mod mdp;
mod text;

pub use maze::{generate_maze, generate_pretrain_suite, MazeSpec, Wall};
pub use mdp::{AgentObs, EnvState, GaMdpSpec, Trajectory};
pub use text::{parse_maze, render_maze};

use serde::{Deserialize, Serialize};

/// A point in the 2-D goal space. Goals and positions share this type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Goals are points: `φ` projects a state onto its position.
pub type Goal = Point;

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// The cell containing this point.
    pub fn cell(self) -> Cell {
        Cell::new(self.x.floor() as i32, self.y.floor() as i32)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    /// Bit-exact key, usable for hashing and memoization.
    pub fn key(self) -> (u64, u64) {
        (self.x.to_bits(), self.y.to_bits())
    }

    pub fn total_cmp(&self, other: &Point) -> std::cmp::Ordering {
        self.x.total_cmp(&other.x).then(self.y.total_cmp(&other.y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn point(self) -> Point {
        Point::new(self.x as f64, self.y as f64)
    }

    pub fn center(self) -> Point {
        Point::new(self.x as f64 + 0.5, self.y as f64 + 0.5)
    }

    pub fn neighbor(self, dir: Dir) -> Cell {
        let (dx, dy) = dir.offset();
        Cell::new(self.x + dx, self.y + dy)
    }
}

/// Cardinal directions. `Up` is `+y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    Up,
    Right,
    Down,
    Left,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::Up, Dir::Right, Dir::Down, Dir::Left];

    pub fn offset(self) -> (i32, i32) {
        match self {
            Dir::Up => (0, 1),
            Dir::Right => (1, 0),
            Dir::Down => (0, -1),
            Dir::Left => (-1, 0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// An action: a cardinal move (discrete mazes) or a 2-D displacement
/// (continuous mazes, magnitude clamped to one cell).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Move(Dir),
    Displace(Point),
}
