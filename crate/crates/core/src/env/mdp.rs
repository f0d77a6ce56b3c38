use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, Cell, Dir, Goal, MazeSpec, Point};
use crate::error::{invalid, Error, Result};

/// Distance within which a continuous position counts as reaching a goal.
pub const CONTINUOUS_REACH_RADIUS: f64 = 0.5;

/// Sub-cell resolution of the continuous agent observation when it is used
/// as a table key.
pub const OFFSET_BINS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub pos: Point,
    pub step_index: usize,
}

impl EnvState {
    pub fn cell(&self) -> Cell {
        self.pos.cell()
    }
}

/// Goal-independent observation shared by every maze.
///
/// Discrete mazes expose the 4-neighbourhood wall mask (bit `i` set when
/// `Dir::ALL[i]` is blocked); continuous mazes expose the offset within the
/// current cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AgentObs {
    Walls(u8),
    Offset(Point),
}

impl AgentObs {
    /// Dense index for tabular policies.
    pub fn key(&self) -> usize {
        match *self {
            AgentObs::Walls(mask) => mask as usize,
            AgentObs::Offset(p) => {
                let bin = |v: f64| ((v * OFFSET_BINS as f64).floor() as usize).min(OFFSET_BINS - 1);
                bin(p.y) * OFFSET_BINS + bin(p.x)
            }
        }
    }

    pub fn key_count(continuous: bool) -> usize {
        if continuous {
            OFFSET_BINS * OFFSET_BINS
        } else {
            16
        }
    }
}

/// A recorded episode segment: `states[i] -a[i]-> states[i+1]`, each
/// transition optionally labelled with the goal it pursued (`None` for
/// goal-independent exploration).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<EnvState>,
    pub actions: Vec<usize>,
    pub labels: Vec<Option<Goal>>,
}

impl Trajectory {
    pub fn start(state: EnvState) -> Self {
        Self {
            states: vec![state],
            actions: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, action: usize, next: EnvState, label: Option<Goal>) {
        self.actions.push(action);
        self.states.push(next);
        self.labels.push(label);
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn last_state(&self) -> EnvState {
        *self.states.last().expect("trajectory has an initial state")
    }

    /// Appends another segment that starts where this one ends.
    pub fn extend(&mut self, other: &Trajectory) {
        debug_assert_eq!(other.states.first(), self.states.last());
        self.states.extend_from_slice(&other.states[1..]);
        self.actions.extend_from_slice(&other.actions);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn goals(&self) -> impl Iterator<Item = Goal> + '_ {
        self.states.iter().map(|s| s.pos)
    }
}

/// The GA-MDP tuple: maze (states, transition function, `p_dg`), horizon,
/// discount and action set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaMdpSpec {
    maze: MazeSpec,
    horizon: usize,
    discount: f64,
    palette: Vec<Action>,
}

impl GaMdpSpec {
    pub fn new(maze: MazeSpec, horizon: usize, discount: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(invalid("horizon must be positive"));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(invalid(format!("discount must lie in (0, 1], got {discount}")));
        }
        let palette = palette(maze.is_continuous());
        Ok(Self {
            maze,
            horizon,
            discount,
            palette,
        })
    }

    pub fn maze(&self) -> &MazeSpec {
        &self.maze
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn is_continuous(&self) -> bool {
        self.maze.is_continuous()
    }

    /// The finite action set used by tabular learners.
    pub fn actions(&self) -> &[Action] {
        &self.palette
    }

    pub fn action_count(&self) -> usize {
        self.palette.len()
    }

    /// Initial state of an episode. Continuous episodes start at the centre
    /// of the start cell.
    pub fn reset(&self) -> EnvState {
        self.state_at(self.maze.start())
    }

    pub fn state_at(&self, cell: Cell) -> EnvState {
        let pos = if self.is_continuous() { cell.center() } else { cell.point() };
        EnvState { pos, step_index: 0 }
    }

    /// The goal realized by a cell: its corner point (discrete) or centre
    /// (continuous).
    pub fn cell_goal(&self, cell: Cell) -> Goal {
        if self.is_continuous() {
            cell.center()
        } else {
            cell.point()
        }
    }

    /// Transition function. Blocked moves keep the position; the step index
    /// always advances.
    pub fn step(&self, state: &EnvState, action: Action) -> Result<EnvState> {
        if state.step_index >= self.horizon {
            return Err(Error::EpisodeExhausted {
                step: state.step_index,
                horizon: self.horizon,
            });
        }
        let pos = if self.is_continuous() {
            let d = match action {
                Action::Move(dir) => {
                    let (dx, dy) = dir.offset();
                    Point::new(dx as f64, dy as f64)
                }
                Action::Displace(d) => d,
            };
            self.slide(state.pos, d)
        } else {
            let Action::Move(dir) = action else {
                return Err(invalid("discrete mazes only accept cardinal moves"));
            };
            let c = state.pos.cell();
            if self.maze.blocked(c, dir) {
                state.pos
            } else {
                c.neighbor(dir).point()
            }
        };
        Ok(EnvState {
            pos,
            step_index: state.step_index + 1,
        })
    }

    /// Steps with the `i`-th palette action.
    pub fn step_index(&self, state: &EnvState, action: usize) -> Result<EnvState> {
        let a = *self
            .palette
            .get(action)
            .ok_or_else(|| invalid(format!("action index {action} out of range")))?;
        self.step(state, a)
    }

    /// Axis-separated point-mass motion: the x component moves first, then
    /// y; a component that would cross a wall or the border is dropped.
    fn slide(&self, pos: Point, d: Point) -> Point {
        let (mut dx, mut dy) = (d.x, d.y);
        if !(dx.is_finite() && dy.is_finite()) {
            return pos;
        }
        let norm = dx.hypot(dy);
        if norm > 1.0 {
            dx /= norm;
            dy /= norm;
        }
        let mut p = pos;
        let from = p.cell();
        let nx = p.x + dx;
        let to = Cell::new(nx.floor() as i32, from.y);
        if to == from || (to.x - from.x).abs() == 1 && !self.maze.blocked(from, if dx > 0.0 { Dir::Right } else { Dir::Left }) {
            p.x = nx;
        }
        let from = p.cell();
        let ny = p.y + dy;
        let to = Cell::new(from.x, ny.floor() as i32);
        if to == from || (to.y - from.y).abs() == 1 && !self.maze.blocked(from, if dy > 0.0 { Dir::Up } else { Dir::Down }) {
            p.y = ny;
        }
        p
    }

    /// `φ`: the achieved goal of a state is its position.
    pub fn achieved_goal(state: &EnvState) -> Goal {
        state.pos
    }

    pub fn agent_obs(&self, state: &EnvState) -> AgentObs {
        if self.is_continuous() {
            let p = state.pos;
            AgentObs::Offset(Point::new(p.x - p.x.floor(), p.y - p.y.floor()))
        } else {
            let c = state.pos.cell();
            let mask = Dir::ALL
                .iter()
                .enumerate()
                .filter(|(_, d)| self.maze.blocked(c, **d))
                .fold(0u8, |m, (i, _)| m | (1 << i));
            AgentObs::Walls(mask)
        }
    }

    /// Exact cell equality (discrete) or distance within half a cell
    /// (continuous).
    pub fn goal_reached(&self, achieved: Goal, goal: Goal) -> bool {
        if self.is_continuous() {
            achieved.dist(goal) <= CONTINUOUS_REACH_RADIUS
        } else {
            achieved.cell() == goal.cell()
        }
    }

    /// Draws a goal from `p_dg`: a uniform desired cell, and a uniform point
    /// inside it for continuous mazes.
    pub fn sample_desired<R: Rng + ?Sized>(&self, rng: &mut R) -> Goal {
        let region = self.maze.desired_region();
        let i = rng.gen_range(0..region.len());
        let cell = *region.iter().nth(i).expect("index within region");
        if self.is_continuous() {
            Point::new(cell.x as f64 + rng.gen::<f64>(), cell.y as f64 + rng.gen::<f64>())
        } else {
            cell.point()
        }
    }

    /// Index of the cell containing a goal, clamped into the grid.
    pub fn goal_index(&self, g: Goal) -> usize {
        self.maze.cell_index(self.maze.clamp(g.cell()))
    }
}

fn palette(continuous: bool) -> Vec<Action> {
    if continuous {
        (0..8)
            .map(|k| {
                let theta = k as f64 * std::f64::consts::FRAC_PI_4;
                let (s, c) = theta.sin_cos();
                // Snap near-zero components so axis moves stay exact.
                let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
                Action::Displace(Point::new(snap(c), snap(s)))
            })
            .collect()
    } else {
        Dir::ALL.iter().map(|d| Action::Move(*d)).collect()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::env::{generate_maze, Wall};

    fn corridor(horizon: usize) -> GaMdpSpec {
        GaMdpSpec::new(MazeSpec::open(3, 1, Cell::new(0, 0)).unwrap(), horizon, 0.98).unwrap()
    }

    #[test]
    fn open_move_and_wall_collision() {
        let spec = GaMdpSpec::new(MazeSpec::open(5, 5, Cell::new(0, 0)).unwrap(), 10, 0.98).unwrap();
        let s = spec.state_at(Cell::new(2, 2));
        let n = spec.step(&s, Action::Move(Dir::Right)).unwrap();
        assert_eq!(n.pos, Point::new(3.0, 2.0));
        assert_eq!(n.step_index, 1);

        let edge = spec.state_at(Cell::new(0, 0));
        let n = spec.step(&edge, Action::Move(Dir::Left)).unwrap();
        assert_eq!(n.pos, edge.pos);
        assert_eq!(n.step_index, 1);
        assert_eq!(GaMdpSpec::achieved_goal(&n), GaMdpSpec::achieved_goal(&edge));
    }

    #[test]
    fn exhausted_episode() {
        let spec = corridor(1);
        let s = spec.reset();
        let s = spec.step(&s, Action::Move(Dir::Right)).unwrap();
        assert!(matches!(
            spec.step(&s, Action::Move(Dir::Right)),
            Err(Error::EpisodeExhausted { step: 1, horizon: 1 })
        ));
    }

    #[test]
    fn corridor_hand_simulation() {
        // 3x1 corridor, horizon 5: R R R L U -> x = 1, 2, 2, 1, 1
        let spec = corridor(5);
        let mut s = spec.reset();
        let mut xs = Vec::new();
        for d in [Dir::Right, Dir::Right, Dir::Right, Dir::Left, Dir::Up] {
            s = spec.step(&s, Action::Move(d)).unwrap();
            xs.push(s.pos.x);
        }
        assert_eq!(xs, vec![1.0, 2.0, 2.0, 1.0, 1.0]);
        assert_eq!(s.step_index, 5);
    }

    #[test]
    fn goal_projection() {
        let s = EnvState { pos: Point::new(3.0, 4.0), step_index: 7 };
        assert_eq!(GaMdpSpec::achieved_goal(&s), Point::new(3.0, 4.0));
        let c = EnvState { pos: Point::new(1.27, 0.53), step_index: 0 };
        assert_eq!(GaMdpSpec::achieved_goal(&c), Point::new(1.27, 0.53));
    }

    #[test]
    fn open_neighbourhood_mask() {
        let spec = GaMdpSpec::new(MazeSpec::open(5, 5, Cell::new(0, 0)).unwrap(), 10, 0.98).unwrap();
        assert_eq!(spec.agent_obs(&spec.state_at(Cell::new(2, 2))), AgentObs::Walls(0));
        // Bottom-left corner: Down and Left blocked by the border.
        assert_eq!(spec.agent_obs(&spec.state_at(Cell::new(0, 0))), AgentObs::Walls(0b1100));
    }

    #[test]
    fn continuous_offset_obs() {
        let maze = MazeSpec::open(10, 10, Cell::new(0, 0)).unwrap().with_continuous(true);
        let spec = GaMdpSpec::new(maze, 10, 0.98).unwrap();
        let s = EnvState { pos: Point::new(2.3, 5.8), step_index: 0 };
        let AgentObs::Offset(o) = spec.agent_obs(&s) else { panic!("continuous obs") };
        assert!((o.x - 0.3).abs() < 1e-12 && (o.y - 0.8).abs() < 1e-12);
    }

    #[test]
    fn obs_invariance_exhaustive() {
        // Equal local wall patterns give equal observations, and the mask
        // matches an independent per-direction wall lookup.
        let maze = generate_maze(3, 6, 6, 0.2);
        let spec = GaMdpSpec::new(maze.clone(), 10, 0.98).unwrap();
        for c in maze.cells() {
            let mut expected = 0u8;
            for (i, d) in Dir::ALL.iter().enumerate() {
                let n = c.neighbor(*d);
                let out = n.x < 0 || n.y < 0 || n.x >= 6 || n.y >= 6;
                if out || maze.walls().contains(&Wall::between(c, n)) {
                    expected |= 1 << i;
                }
            }
            let mut s = spec.state_at(c);
            assert_eq!(spec.agent_obs(&s), AgentObs::Walls(expected));
            s.step_index = 4;
            assert_eq!(spec.agent_obs(&s), AgentObs::Walls(expected));
        }
    }

    #[test]
    fn continuous_sliding() {
        let walls = BTreeSet::from([Wall::between(Cell::new(0, 0), Cell::new(1, 0))]);
        let maze = MazeSpec::new(2, 2, walls, Cell::new(0, 0), [Cell::new(1, 1)].into(), true).unwrap();
        let spec = GaMdpSpec::new(maze, 10, 0.98).unwrap();
        let s = EnvState { pos: Point::new(0.5, 0.5), step_index: 0 };
        // Diagonal up-right: x blocked by the wall, y slides up.
        let n = spec.step(&s, Action::Displace(Point::new(0.6, 0.6))).unwrap();
        assert_eq!(n.pos.x, 0.5);
        assert!((n.pos.y - 1.1).abs() < 1e-12);
        // Oversized displacement is clamped to unit length.
        let n = spec.step(&s, Action::Displace(Point::new(0.0, 3.0))).unwrap();
        assert!((n.pos.y - 1.5).abs() < 1e-12);
        // Border blocks.
        let n = spec.step(&s, Action::Displace(Point::new(-1.0, 0.0))).unwrap();
        assert_eq!(n.pos, s.pos);
    }

    #[test]
    fn reach_predicates() {
        let d = GaMdpSpec::new(MazeSpec::open(3, 3, Cell::new(0, 0)).unwrap(), 5, 0.9).unwrap();
        assert!(d.goal_reached(Point::new(1.0, 2.0), Point::new(1.0, 2.0)));
        assert!(!d.goal_reached(Point::new(1.0, 2.0), Point::new(2.0, 2.0)));
        let c = GaMdpSpec::new(MazeSpec::open(3, 3, Cell::new(0, 0)).unwrap().with_continuous(true), 5, 0.9).unwrap();
        assert!(c.goal_reached(Point::new(1.0, 1.0), Point::new(1.3, 1.4)));
        assert!(!c.goal_reached(Point::new(1.0, 1.0), Point::new(1.4, 1.4)));
    }

    #[test]
    fn spec_validation() {
        let m = MazeSpec::open(2, 2, Cell::new(0, 0)).unwrap();
        assert!(GaMdpSpec::new(m.clone(), 0, 0.9).is_err());
        assert!(GaMdpSpec::new(m.clone(), 5, 0.0).is_err());
        assert!(GaMdpSpec::new(m.clone(), 5, 1.5).is_err());
        assert!(GaMdpSpec::new(m, 5, 1.0).is_ok());
    }
}
