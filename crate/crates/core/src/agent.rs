//! Tabular goal-conditioned learner with hindsight relabelling.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Cell, EnvState, GaMdpSpec, Goal, Trajectory};
use crate::error::{invalid, Error, Result};

pub const LEARNING_RATE: f64 = 0.5;
pub const EPSILON: f64 = 0.1;
pub const BATCH_SIZE: usize = 256;
pub const POOL_CAPACITY: usize = 50_000;

/// Action values keyed by (state cell, goal cell, action). Continuous
/// positions are binned to their cell.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_cells: usize,
    n_actions: usize,
    values: Vec<f64>,
    pub lr: f64,
    pub gamma: f64,
}

impl QTable {
    pub fn new(spec: &GaMdpSpec, lr: f64, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lr) {
            return Err(invalid(format!("learning rate must lie in [0, 1], got {lr}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(invalid(format!("discount must lie in (0, 1], got {gamma}")));
        }
        let n_cells = spec.maze().cell_count();
        let n_actions = spec.action_count();
        Ok(Self {
            n_cells,
            n_actions,
            values: vec![0.0; n_cells * n_cells * n_actions],
            lr,
            gamma,
        })
    }

    fn offset(&self, spec: &GaMdpSpec, s: &EnvState, g: Goal) -> usize {
        (spec.goal_index(s.pos) * self.n_cells + spec.goal_index(g)) * self.n_actions
    }

    pub fn values(&self, spec: &GaMdpSpec, s: &EnvState, g: Goal) -> &[f64] {
        let o = self.offset(spec, s, g);
        &self.values[o..o + self.n_actions]
    }

    pub fn get(&self, spec: &GaMdpSpec, s: &EnvState, g: Goal, a: usize) -> f64 {
        self.values(spec, s, g)[a]
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }
}

/// ε-greedy action with uniform tie-breaking among maximal values.
pub fn act<R: Rng + ?Sized>(q: &QTable, spec: &GaMdpSpec, state: &EnvState, goal: Goal, epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..q.n_actions);
    }
    let vals = q.values(spec, state, goal);
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = vals.iter().filter(|v| **v == best).count();
    let mut k = if ties > 1 { rng.gen_range(0..ties) } else { 0 };
    for (a, v) in vals.iter().enumerate() {
        if *v == best {
            if k == 0 {
                return a;
            }
            k -= 1;
        }
    }
    unreachable!("some action attains the maximum")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: EnvState,
    pub a: usize,
    pub s_next: EnvState,
    /// `None` for goal-independent exploration steps.
    pub goal: Option<Goal>,
}

#[derive(Clone, Copy, Debug)]
struct Stored {
    t: Transition,
    /// Absolute index of the first and one-past-last transition of the
    /// owning trajectory.
    traj: (u64, u64),
}

/// Transition ring that evicts whole trajectories from the front.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Stored>,
    /// Absolute index of `items[0]`.
    base: u64,
    /// Achieved goals per cell over the stored transitions.
    cell_counts: BTreeMap<Cell, u64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::new(),
            base: 0,
            cell_counts: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push_trajectory(&mut self, traj: &Trajectory) -> Result<()> {
        let n = traj.len();
        if n == 0 {
            return Ok(());
        }
        if n > self.capacity {
            return Err(invalid(format!("trajectory of {n} transitions exceeds buffer capacity {}", self.capacity)));
        }
        while self.items.len() + n > self.capacity {
            let (_, end) = self.items[0].traj;
            let drop = (end - self.base) as usize;
            for old in self.items.drain(..drop) {
                let c = old.t.s_next.cell();
                let n = self.cell_counts.get_mut(&c).expect("counted cell");
                *n -= 1;
                if *n == 0 {
                    self.cell_counts.remove(&c);
                }
            }
            self.base = end;
        }
        let start = self.base + self.items.len() as u64;
        let span = (start, start + n as u64);
        for i in 0..n {
            *self.cell_counts.entry(traj.states[i + 1].cell()).or_insert(0) += 1;
            self.items.push_back(Stored {
                t: Transition {
                    s: traj.states[i],
                    a: traj.actions[i],
                    s_next: traj.states[i + 1],
                    goal: traj.labels[i],
                },
                traj: span,
            });
        }
        Ok(())
    }

    /// Achieved-goal counts per cell, kept in step with the stored
    /// transitions.
    pub fn cell_counts(&self) -> &BTreeMap<Cell, u64> {
        &self.cell_counts
    }

    pub fn transition(&self, i: usize) -> &Transition {
        &self.items[i].t
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.items.iter().map(|s| &s.t)
    }

    /// `φ(s_next)` of the `i`-th stored transition.
    pub fn achieved_goal(&self, i: usize) -> Goal {
        GaMdpSpec::achieved_goal(&self.items[i].t.s_next)
    }

    pub fn achieved_goals(&self) -> impl Iterator<Item = Goal> + '_ {
        self.items.iter().map(|s| s.t.s_next.pos)
    }

    /// Up to `max` achieved goals drawn without replacement, in buffer
    /// order.
    pub fn subsample_achieved<R: Rng + ?Sized>(&self, max: usize, rng: &mut R) -> Vec<Goal> {
        if self.len() <= max {
            return self.achieved_goals().collect();
        }
        let mut idx = index::sample(rng, self.len(), max).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| self.achieved_goal(i)).collect()
    }

    /// Start and end (exclusive) buffer positions of the trajectory owning
    /// transition `i`.
    pub fn trajectory_span(&self, i: usize) -> (usize, usize) {
        let (a, b) = self.items[i].traj;
        ((a - self.base) as usize, (b - self.base) as usize)
    }
}

/// A sampled transition with a pre-drawn hindsight goal `φ(s_j)`, `j`
/// uniform over the later states of its trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchItem {
    pub transition: Transition,
    pub future_goal: Option<Goal>,
    /// Position of the future state within the trajectory's state list.
    pub future_index: Option<usize>,
    pub index_in_trajectory: usize,
}

/// `n` transitions drawn uniformly with replacement.
pub fn sample_batch<R: Rng + ?Sized>(buffer: &ReplayBuffer, n: usize, rng: &mut R) -> Result<Vec<BatchItem>> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if n == 0 {
        return Err(invalid("batch size must be positive"));
    }
    Ok((0..n)
        .map(|_| {
            let k = rng.gen_range(0..buffer.len());
            let (start, end) = buffer.trajectory_span(k);
            let i = k - start;
            let len = end - start;
            // State j in (i, len] is the successor state of transition j-1.
            let j = rng.gen_range(i + 1..=len);
            BatchItem {
                transition: buffer.items[k].t,
                future_goal: Some(buffer.achieved_goal(start + j - 1)),
                future_index: Some(j),
                index_in_trajectory: i,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Real,
    Future,
    Actual,
    Achieved,
    Behavioral,
}

impl Category {
    pub const ALL: [Category; 5] = [Self::Real, Self::Future, Self::Actual, Self::Achieved, Self::Behavioral];
}

/// Relabelling mix in `rfaab` order: real, future, actual, achieved,
/// behavioral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelRatios(pub [u32; 5]);

impl RelabelRatios {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn fraction(&self, c: Category) -> f64 {
        self.0[c as usize] as f64 / self.total() as f64
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Category {
        let mut k = rng.gen_range(0..self.total());
        for c in Category::ALL {
            if k < self.0[c as usize] {
                return c;
            }
            k -= self.0[c as usize];
        }
        unreachable!("draw below total")
    }
}

impl Default for RelabelRatios {
    fn default() -> Self {
        Self([1, 4, 3, 1, 1])
    }
}

impl FromStr for RelabelRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("relabel mix must look like `rfaab_1_4_3_1_1`, got `{s}`"));
        let mut parts = s.split('_');
        if parts.next() != Some("rfaab") {
            return Err(bad());
        }
        let nums: Vec<u32> = parts.map(|p| p.parse::<u32>().map_err(|_| bad())).collect::<Result<_>>()?;
        let arr: [u32; 5] = nums.try_into().map_err(|_| bad())?;
        if arr.iter().sum::<u32>() == 0 {
            return Err(invalid("relabel mix must have a positive total"));
        }
        Ok(Self(arr))
    }
}

impl fmt::Display for RelabelRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, fu, ac, ach, b] = self.0;
        write!(f, "rfaab_{r}_{fu}_{ac}_{ach}_{b}")
    }
}

/// Historical desired-goal draws (`actual`) and chosen sub-goals
/// (`behavioral`), each a FIFO of bounded size.
#[derive(Clone, Debug, Default)]
pub struct GoalPools {
    capacity: usize,
    actual: VecDeque<Goal>,
    behavioral: VecDeque<Goal>,
}

impl GoalPools {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            ..Self::default()
        }
    }

    fn push(pool: &mut VecDeque<Goal>, cap: usize, g: Goal) {
        if pool.len() == cap {
            pool.pop_front();
        }
        pool.push_back(g);
    }

    pub fn push_actual(&mut self, g: Goal) {
        Self::push(&mut self.actual, self.capacity, g);
    }

    pub fn push_behavioral(&mut self, g: Goal) {
        Self::push(&mut self.behavioral, self.capacity, g);
    }

    pub fn actual(&self) -> &VecDeque<Goal> {
        &self.actual
    }

    pub fn behavioral(&self) -> &VecDeque<Goal> {
        &self.behavioral
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Labelled {
    pub transition: Transition,
    pub goal: Goal,
    pub category: Category,
}

/// Assigns each sampled transition a goal from its drawn category. Empty
/// sources fall back to the transition's own achieved goal; exploration
/// transitions have no real goal and use `achieved` instead.
pub fn relabel<R: Rng + ?Sized>(
    batch: &[BatchItem],
    ratios: &RelabelRatios,
    pools: &GoalPools,
    buffer: &ReplayBuffer,
    rng: &mut R,
) -> Vec<Labelled> {
    let pick = |pool: &VecDeque<Goal>, rng: &mut R| {
        (!pool.is_empty()).then(|| pool[rng.gen_range(0..pool.len())])
    };
    batch
        .iter()
        .map(|item| {
            let t = item.transition;
            let own = GaMdpSpec::achieved_goal(&t.s_next);
            let mut category = ratios.draw(rng);
            if category == Category::Real && t.goal.is_none() {
                category = Category::Achieved;
            }
            let goal = match category {
                Category::Real => t.goal,
                Category::Future => item.future_goal,
                Category::Actual => pick(&pools.actual, rng),
                Category::Behavioral => pick(&pools.behavioral, rng),
                Category::Achieved => (!buffer.is_empty()).then(|| buffer.achieved_goal(rng.gen_range(0..buffer.len()))),
            }
            .unwrap_or(own);
            Labelled {
                transition: t,
                goal,
                category,
            }
        })
        .collect()
}

/// One Q-learning step per item with sparse reward `1[goal reached at
/// s_next]` and no bootstrap past a reached goal.
pub fn q_update(q: &mut QTable, batch: &[Labelled], spec: &GaMdpSpec) {
    let bound = 1.0 / (1.0 - q.gamma).max(f64::MIN_POSITIVE);
    for item in batch {
        let t = &item.transition;
        let reached = spec.goal_reached(GaMdpSpec::achieved_goal(&t.s_next), item.goal);
        let target = if reached {
            1.0
        } else {
            let next = q.values(spec, &t.s_next, item.goal);
            q.gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let o = q.offset(spec, &t.s, item.goal) + t.a;
        let v = &mut q.values[o];
        *v += q.lr * (target - *v);
        debug_assert!(v.is_finite() && *v >= 0.0 && *v <= bound + 1e-9, "Q out of range: {v}");
    }
}
