use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Cell, Dir};
use crate::error::{invalid, Result};
use crate::rng;

/// A blocked edge between two 4-adjacent cells, stored with the smaller
/// cell first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Wall(Cell, Cell);

impl Wall {
    pub fn between(a: Cell, b: Cell) -> Self {
        if a <= b {
            Wall(a, b)
        } else {
            Wall(b, a)
        }
    }

    pub fn cells(self) -> (Cell, Cell) {
        (self.0, self.1)
    }
}

/// Maze layout plus the support of the desired-goal distribution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeSpec {
    width: usize,
    height: usize,
    walls: BTreeSet<Wall>,
    start: Cell,
    desired_region: BTreeSet<Cell>,
    continuous: bool,
}

impl MazeSpec {
    /// Builds a maze, checking bounds, wall adjacency and connectivity.
    pub fn new(
        width: usize,
        height: usize,
        walls: BTreeSet<Wall>,
        start: Cell,
        desired_region: BTreeSet<Cell>,
        continuous: bool,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("maze dimensions must be at least 1x1"));
        }
        let maze = Self {
            width,
            height,
            walls,
            start,
            desired_region,
            continuous,
        };
        if !maze.contains(start) {
            return Err(invalid(format!("start cell {start:?} out of bounds")));
        }
        if maze.desired_region.is_empty() {
            return Err(invalid("desired region is empty"));
        }
        if let Some(c) = maze.desired_region.iter().find(|c| !maze.contains(**c)) {
            return Err(invalid(format!("desired cell {c:?} out of bounds")));
        }
        for w in &maze.walls {
            let (a, b) = w.cells();
            let adjacent = (a.x - b.x).abs() + (a.y - b.y).abs() == 1;
            if !adjacent || !maze.contains(a) || !maze.contains(b) {
                return Err(invalid(format!("wall {w:?} is not an interior edge")));
            }
        }
        if !maze.is_connected() {
            return Err(invalid("maze is not connected from the start cell"));
        }
        Ok(maze)
    }

    /// A maze without interior walls.
    pub fn open(width: usize, height: usize, start: Cell) -> Result<Self> {
        let corner = Cell::new(width as i32 - 1, height as i32 - 1);
        Self::new(width, height, BTreeSet::new(), start, [corner].into(), false)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn walls(&self) -> &BTreeSet<Wall> {
        &self.walls
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn desired_region(&self) -> &BTreeSet<Cell> {
        &self.desired_region
    }

    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    /// Same layout, other dynamics.
    pub fn with_continuous(mut self, continuous: bool) -> Self {
        self.continuous = continuous;
        self
    }

    pub fn with_start(mut self, start: Cell) -> Result<Self> {
        if !self.contains(start) {
            return Err(invalid(format!("start cell {start:?} out of bounds")));
        }
        self.start = start;
        Ok(self)
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    /// Row-major index of a cell, `y * width + x`.
    pub fn cell_index(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    /// Clamps an arbitrary cell into the grid.
    pub fn clamp(&self, c: Cell) -> Cell {
        Cell::new(
            c.x.clamp(0, self.width as i32 - 1),
            c.y.clamp(0, self.height as i32 - 1),
        )
    }

    /// True when leaving `c` in direction `dir` hits a wall or the border.
    pub fn blocked(&self, c: Cell, dir: Dir) -> bool {
        let n = c.neighbor(dir);
        !self.contains(n) || self.walls.contains(&Wall::between(c, n))
    }

    pub fn reachable_from(&self, from: Cell) -> BTreeSet<Cell> {
        let mut seen = BTreeSet::new();
        if !self.contains(from) {
            return seen;
        }
        let mut queue = VecDeque::from([from]);
        seen.insert(from);
        while let Some(c) = queue.pop_front() {
            for d in Dir::ALL {
                if !self.blocked(c, d) {
                    let n = c.neighbor(d);
                    if seen.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
        }
        seen
    }

    pub fn is_connected(&self) -> bool {
        self.reachable_from(self.start).len() == self.cell_count()
    }

    /// Breadth-first shortest path length between two cells, if reachable.
    pub fn distance(&self, from: Cell, to: Cell) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.cell_count()];
        let mut queue = VecDeque::from([from]);
        dist[self.cell_index(from)] = 0;
        while let Some(c) = queue.pop_front() {
            let dc = dist[self.cell_index(c)];
            if c == to {
                return Some(dc);
            }
            for d in Dir::ALL {
                if !self.blocked(c, d) {
                    let n = c.neighbor(d);
                    let i = self.cell_index(n);
                    if dist[i] == usize::MAX {
                        dist[i] = dc + 1;
                        queue.push_back(n);
                    }
                }
            }
        }
        None
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height as i32).flat_map(move |y| (0..self.width as i32).map(move |x| Cell::new(x, y)))
    }

    /// Every interior edge of the grid, in sorted order.
    fn interior_edges(width: usize, height: usize) -> BTreeSet<Wall> {
        let mut edges = BTreeSet::new();
        for y in 0..height as i32 {
            for x in 0..width as i32 {
                let c = Cell::new(x, y);
                if (x + 1) < width as i32 {
                    edges.insert(Wall::between(c, Cell::new(x + 1, y)));
                }
                if (y + 1) < height as i32 {
                    edges.insert(Wall::between(c, Cell::new(x, y + 1)));
                }
            }
        }
        edges
    }
}

/// Recursive-backtracker spanning tree from the bottom-left cell, then every
/// remaining interior wall is removed independently with `loop_prob`.
///
/// Out-of-range parameters are clamped: zero dimensions become 1 and
/// `loop_prob` is clamped to `[0, 1]` (NaN counts as 0).
pub fn generate_maze(seed: u64, width: usize, height: usize, loop_prob: f64) -> MazeSpec {
    let width = width.max(1);
    let height = height.max(1);
    let loop_prob = if loop_prob.is_nan() { 0.0 } else { loop_prob.clamp(0.0, 1.0) };
    let mut rng = rng::seeded(seed);

    let mut walls = MazeSpec::interior_edges(width, height);
    let start = Cell::new(0, 0);
    let in_bounds = |c: Cell| c.x >= 0 && c.y >= 0 && (c.x as usize) < width && (c.y as usize) < height;
    let mut visited = vec![false; width * height];
    let idx = |c: Cell| c.y as usize * width + c.x as usize;
    visited[idx(start)] = true;
    let mut stack = vec![start];
    while let Some(&c) = stack.last() {
        let mut options: Vec<Cell> = Dir::ALL
            .iter()
            .map(|d| c.neighbor(*d))
            .filter(|n| in_bounds(*n) && !visited[idx(*n)])
            .collect();
        if options.is_empty() {
            stack.pop();
            continue;
        }
        options.shuffle(&mut rng);
        let next = options[0];
        walls.remove(&Wall::between(c, next));
        visited[idx(next)] = true;
        stack.push(next);
    }

    if loop_prob > 0.0 {
        // Iterate a snapshot so removal order is the sorted edge order.
        let remaining: Vec<Wall> = walls.iter().copied().collect();
        for w in remaining {
            if rng.gen::<f64>() < loop_prob {
                walls.remove(&w);
            }
        }
    }

    let goal = Cell::new(width as i32 - 1, height as i32 - 1);
    MazeSpec {
        width,
        height,
        walls,
        start,
        desired_region: [goal].into(),
        continuous: false,
    }
}

/// Loop probabilities cycled across the suite: perfect mazes through to
/// nearly open rooms.
const SUITE_LOOP_PROBS: [f64; 5] = [0.0, 0.15, 0.3, 0.5, 0.75];

/// Small mazes for skill pre-training, each with its start at the central
/// cell. Layouts are pairwise distinct.
pub fn generate_pretrain_suite(seed: u64, count: usize, size: usize) -> Result<Vec<MazeSpec>> {
    if size < 3 {
        return Err(invalid(format!("pre-training maze size must be >= 3, got {size}")));
    }
    let center = Cell::new(size as i32 / 2, size as i32 / 2);
    let mut suite: Vec<MazeSpec> = Vec::with_capacity(count);
    let mut attempt: u64 = 0;
    while suite.len() < count {
        let loop_prob = SUITE_LOOP_PROBS[suite.len() % SUITE_LOOP_PROBS.len()];
        let sub_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(attempt);
        attempt += 1;
        let mut maze = generate_maze(sub_seed, size, size, loop_prob);
        maze.start = center;
        if suite.iter().all(|m| m.walls != maze.walls) {
            suite.push(maze);
        } else if attempt > 1000 * (count as u64 + 1) {
            return Err(invalid(format!("cannot draw {count} distinct {size}x{size} layouts")));
        }
    }
    Ok(suite)
}
