//! Brute-force verifiers on small discrete instances: the exploration goal
//! distribution, the entropy-mixture bound, trajectory decomposition into
//! goal-transition patterns, pattern substitution and the cluster
//! invariance of `I + H`.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::{generate_maze, AgentObs, Cell, Dir, EnvState, GaMdpSpec, Goal, MazeSpec, Point, Trajectory, Wall};
use crate::error::{invalid, Error, Result};
use crate::rng;

pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Action distribution as a function of the current state.
pub type Policy<'a> = &'a dyn Fn(&EnvState) -> Vec<f64>;

pub fn uniform_policy(n_actions: usize) -> impl Fn(&EnvState) -> Vec<f64> {
    move |_| vec![1.0 / n_actions as f64; n_actions]
}

fn guard(spec: &GaMdpSpec, horizon: usize) -> Result<()> {
    if spec.is_continuous() {
        return Err(invalid("enumeration needs a discrete maze"));
    }
    let count = (spec.action_count() as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge { count, limit: ENUMERATION_LIMIT });
    }
    Ok(())
}

/// Every trajectory of exactly `horizon` steps with its probability.
#[derive(Clone, Debug)]
pub struct TrajectorySet {
    pub trajectories: Vec<(Trajectory, f64)>,
    pub horizon: usize,
}

impl TrajectorySet {
    /// `p(g | τ)`: visit frequencies over the post-initial states.
    pub fn goal_distribution(&self, i: usize) -> BTreeMap<Cell, f64> {
        let (t, _) = &self.trajectories[i];
        let mut d = BTreeMap::new();
        for s in &t.states[1..] {
            *d.entry(s.cell()).or_insert(0.0) += 1.0 / self.horizon as f64;
        }
        d
    }
}

pub fn enumerate_trajectories(spec: &GaMdpSpec, start: EnvState, horizon: usize, policy: Policy) -> Result<TrajectorySet> {
    guard(spec, horizon)?;
    if horizon == 0 {
        return Err(invalid("horizon must be positive"));
    }
    let mut out = Vec::new();
    let mut stack = vec![(Trajectory::start(start), 1.0)];
    while let Some((t, p)) = stack.pop() {
        if t.len() == horizon {
            out.push((t, p));
            continue;
        }
        let s = t.last_state();
        let probs = policy(&s);
        for a in (0..spec.action_count()).rev() {
            let mut next = t.clone();
            next.push(a, spec.step_index(&s, a)?, None);
            stack.push((next, p * probs[a]));
        }
    }
    Ok(TrajectorySet { trajectories: out, horizon })
}

/// Exact exploration goal distribution
/// `p_e(g) = Σ_τ Π(τ) (1/T) Σ_{i=1..T} 1[φ(s_i) = g]`.
pub fn enumerate_pe(spec: &GaMdpSpec, start: EnvState, horizon: usize, policy: Policy) -> Result<BTreeMap<Cell, f64>> {
    guard(spec, horizon)?;
    if horizon == 0 {
        return Err(invalid("horizon must be positive"));
    }
    let mut pe = BTreeMap::new();
    let w = 1.0 / horizon as f64;
    let mut stack = vec![(start, 1.0, 0usize)];
    while let Some((s, p, depth)) = stack.pop() {
        if depth == horizon || p == 0.0 {
            continue;
        }
        let probs = policy(&s);
        for (a, pa) in probs.iter().enumerate() {
            if *pa == 0.0 {
                continue;
            }
            let n = spec.step_index(&s, a)?;
            let q = p * pa;
            // Each trajectory through this prefix visits `n` once here.
            *pe.entry(n.cell()).or_insert(0.0) += q * w;
            stack.push((n, q, depth + 1));
        }
    }
    Ok(pe)
}

/// Shannon entropy in nats of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln()).sum()
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidDistribution("entries must be finite and non-negative".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("sums to {s}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `H(c·p1 + (1−c)·p2)` against `c·H(p1) + (1−c)·H(p2)`.
pub fn entropy_mixture_check(p1: &[f64], p2: &[f64], c: f64) -> Result<MixtureCheck> {
    check_distribution(p1)?;
    check_distribution(p2)?;
    if p1.len() != p2.len() {
        return Err(Error::InvalidDistribution("supports differ in size".into()));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(invalid(format!("mixture weight must lie in [0, 1], got {c}")));
    }
    let mix: Vec<f64> = p1.iter().zip(p2).map(|(a, b)| c * a + (1.0 - c) * b).collect();
    let lhs = entropy(&mix);
    let rhs = c * entropy(p1) + (1.0 - c) * entropy(p2);
    Ok(MixtureCheck { lhs, rhs, holds: lhs >= rhs - 1e-12 })
}

/// `ψ = {agent start, agent end, ΔG, ΔA}` with its position in the source
/// trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoalTransitionPattern {
    pub agent_start: AgentObs,
    pub agent_end: AgentObs,
    pub delta_g: Point,
    pub actions: Vec<usize>,
    pub start_index: usize,
}

impl GoalTransitionPattern {
    pub fn cardinality(&self) -> usize {
        self.actions.len()
    }
}

/// Splits a trajectory at the first occurrence of each maximal run of equal
/// goals, appends the terminal tuple `(φ(s_T), T)` and turns consecutive
/// marks into patterns. A final mark that coincides with `T` yields no
/// actions and is dropped.
pub fn decompose_trajectory(traj: &Trajectory, spec: &GaMdpSpec) -> Result<Vec<GoalTransitionPattern>> {
    if traj.is_empty() {
        return Err(invalid("trajectory has no transitions"));
    }
    let goals: Vec<Goal> = traj.states.iter().map(GaMdpSpec::achieved_goal).collect();
    let mut marks: Vec<(Goal, usize)> = vec![(goals[0], 0)];
    for (t, g) in goals.iter().enumerate().skip(1) {
        if g.key() != goals[t - 1].key() {
            marks.push((*g, t));
        }
    }
    let n = traj.len();
    marks.push((goals[n], n));
    Ok(marks
        .windows(2)
        .filter(|w| w[1].1 > w[0].1)
        .map(|w| {
            let ((g0, t0), (g1, t1)) = (w[0], w[1]);
            GoalTransitionPattern {
                agent_start: spec.agent_obs(&traj.states[t0]),
                agent_end: spec.agent_obs(&traj.states[t1]),
                delta_g: g1.sub(g0),
                actions: traj.actions[t0..t1].to_vec(),
                start_index: t0,
            }
        })
        .collect())
}

fn obs_bits(o: &AgentObs) -> (u8, u64, u64) {
    match o {
        AgentObs::Walls(m) => (*m, 0, 0),
        AgentObs::Offset(p) => (255, p.x.to_bits(), p.y.to_bits()),
    }
}

type PatternKey = ((u8, u64, u64), (u8, u64, u64), (u64, u64));

fn pattern_key(p: &GoalTransitionPattern) -> PatternKey {
    (obs_bits(&p.agent_start), obs_bits(&p.agent_end), p.delta_g.key())
}

/// Replaces each pattern with the shortest library pattern sharing its
/// agent start, agent end and `ΔG`. Returns the new plan and its length.
pub fn substitute_patterns(decomp: &[GoalTransitionPattern], library: &[GoalTransitionPattern]) -> Result<(Vec<GoalTransitionPattern>, usize)> {
    let mut best: HashMap<PatternKey, &GoalTransitionPattern> = HashMap::new();
    for p in library {
        let e = best.entry(pattern_key(p)).or_insert(p);
        if p.cardinality() < e.cardinality() {
            *e = p;
        }
    }
    let plan: Vec<GoalTransitionPattern> = decomp
        .iter()
        .map(|p| {
            best.get(&pattern_key(p))
                .map(|q| (*q).clone())
                .ok_or(Error::UnmatchedPattern { delta: p.delta_g })
        })
        .collect::<Result<_>>()?;
    let total = plan.iter().map(GoalTransitionPattern::cardinality).sum();
    Ok((plan, total))
}

/// Replays the concatenated pattern actions from `start`.
pub fn replay(patterns: &[GoalTransitionPattern], start: EnvState, spec: &GaMdpSpec) -> Result<Trajectory> {
    let mut t = Trajectory::start(start);
    let mut s = start;
    for a in patterns.iter().flat_map(|p| &p.actions) {
        s = spec.step_index(&s, *a)?;
        t.push(*a, s, None);
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClusterReport {
    pub i_zg: f64,
    pub h_g_given_z: f64,
    pub i_omega_g: f64,
    pub h_g_given_omega: f64,
    pub sums_equal: bool,
}

/// Information split of the same goal marginal under trajectories and under
/// a clustering of them.
pub fn cluster_equivalence(ts: &TrajectorySet, clustering: &[usize]) -> Result<ClusterReport> {
    if clustering.len() != ts.trajectories.len() {
        return Err(invalid("clustering must assign every trajectory"));
    }
    let per_traj: Vec<BTreeMap<Cell, f64>> = (0..ts.trajectories.len()).map(|i| ts.goal_distribution(i)).collect();
    let cells: Vec<Cell> = {
        let mut all: Vec<Cell> = per_traj.iter().flat_map(|d| d.keys().copied()).collect();
        all.sort();
        all.dedup();
        all
    };
    let col = |c: &Cell| cells.binary_search(c).expect("known cell");

    let traj_rows: Vec<(f64, Vec<f64>)> = ts
        .trajectories
        .iter()
        .zip(&per_traj)
        .map(|((_, p), d)| {
            let mut row = vec![0.0; cells.len()];
            d.iter().for_each(|(c, q)| row[col(c)] = *q);
            (*p, row)
        })
        .collect();
    let (i_omega_g, h_g_given_omega) = split(&traj_rows);

    let mut clusters: BTreeMap<usize, (f64, Vec<f64>)> = BTreeMap::new();
    for ((p, row), z) in traj_rows.iter().zip(clustering) {
        let e = clusters.entry(*z).or_insert_with(|| (0.0, vec![0.0; cells.len()]));
        e.0 += p;
        e.1.iter_mut().zip(row).for_each(|(a, b)| *a += p * b);
    }
    let mut cluster_rows = Vec::with_capacity(clusters.len());
    for (z, (pz, mass)) in clusters {
        if pz <= 0.0 {
            return Err(Error::ZeroMassCluster(z));
        }
        cluster_rows.push((pz, mass.into_iter().map(|m| m / pz).collect::<Vec<f64>>()));
    }
    let (i_zg, h_g_given_z) = split(&cluster_rows);
    Ok(ClusterReport {
        i_zg,
        h_g_given_z,
        i_omega_g,
        h_g_given_omega,
        sums_equal: ((i_zg + h_g_given_z) - (i_omega_g + h_g_given_omega)).abs() <= 1e-9,
    })
}

/// `(I(X;G), H(G|X))` from rows of `(p(x), p(g|x))`.
fn split(rows: &[(f64, Vec<f64>)]) -> (f64, f64) {
    let n = rows.first().map_or(0, |r| r.1.len());
    let marginal: Vec<f64> = (0..n).map(|j| rows.iter().map(|(p, r)| p * r[j]).sum()).collect();
    let mut mi = 0.0;
    let mut h_cond = 0.0;
    for (p, row) in rows {
        for (j, q) in row.iter().enumerate() {
            if *p > 0.0 && *q > 0.0 {
                mi += p * q * (q / marginal[j]).ln();
                h_cond -= p * q * q.ln();
            }
        }
    }
    (mi, h_cond)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub violations: usize,
    pub max_error: f64,
    pub details: serde_json::Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
    pub passed: bool,
}

/// 3-cell corridor along the top row of a 3×2 maze, start in the middle.
/// With `blocked_left`, a wall separates the middle and left cells (the
/// left cell stays reachable through the bottom row).
pub fn corridor_fixture(blocked_left: bool) -> GaMdpSpec {
    let mut walls = std::collections::BTreeSet::from([
        Wall::between(Cell::new(0, 1), Cell::new(0, 0)),
        Wall::between(Cell::new(1, 1), Cell::new(1, 0)),
    ]);
    if blocked_left {
        walls.insert(Wall::between(Cell::new(0, 1), Cell::new(1, 1)));
        walls.remove(&Wall::between(Cell::new(0, 1), Cell::new(0, 0)));
    }
    let maze = MazeSpec::new(3, 2, walls, Cell::new(1, 1), [Cell::new(2, 1)].into(), false).expect("fixture maze is valid");
    GaMdpSpec::new(maze, 10, 1.0).expect("fixture spec is valid")
}

/// Uniform over Left/Right only.
pub fn left_right_policy(_: &EnvState) -> Vec<f64> {
    let mut p = vec![0.0; 4];
    p[Dir::Left.index()] = 0.5;
    p[Dir::Right.index()] = 0.5;
    p
}

fn random_distribution<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() }).collect();
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn random_walk<R: Rng>(spec: &GaMdpSpec, start: EnvState, len: usize, rng: &mut R) -> Result<Trajectory> {
    let mut t = Trajectory::start(start);
    let mut s = start;
    for _ in 0..len {
        let a = rng.gen_range(0..spec.action_count());
        s = spec.step_index(&s, a)?;
        t.push(a, s, None);
    }
    Ok(t)
}

fn max_abs_diff(a: &BTreeMap<Cell, f64>, b: &BTreeMap<Cell, f64>) -> f64 {
    a.keys()
        .chain(b.keys())
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Runs every oracle check and collects the results.
pub fn run_oracle_suite(seed: u64) -> Result<OracleReport> {
    let clock = Instant::now();
    let mut rng = rng::seeded(seed);
    let mut checks = Vec::new();

    // Exploration goal distribution on hand-enumerated corridors.
    {
        let open = corridor_fixture(false);
        let blocked = corridor_fixture(true);
        let mid = open.reset();
        let c = |x| Cell::new(x, 1);
        let cases = [
            (enumerate_pe(&open, mid, 1, &left_right_policy)?, BTreeMap::from([(c(0), 0.5), (c(2), 0.5)])),
            (enumerate_pe(&blocked, mid, 1, &left_right_policy)?, BTreeMap::from([(c(1), 0.5), (c(2), 0.5)])),
            (
                enumerate_pe(&open, mid, 2, &left_right_policy)?,
                BTreeMap::from([(c(0), 0.375), (c(1), 0.25), (c(2), 0.375)]),
            ),
        ];
        let errs: Vec<f64> = cases.iter().map(|(got, want)| max_abs_diff(got, want)).collect();
        let max_error = errs.iter().copied().fold(0.0, f64::max);
        checks.push(CheckResult {
            name: "enumerate_pe_corridors".into(),
            cases: cases.len(),
            violations: errs.iter().filter(|e| **e != 0.0).count(),
            max_error,
            details: serde_json::json!({
                "open_t1": cases[0].0.iter().map(|(k, v)| (format!("{},{}", k.x, k.y), *v)).collect::<BTreeMap<_, _>>(),
                "blocked_t1": cases[1].0.iter().map(|(k, v)| (format!("{},{}", k.x, k.y), *v)).collect::<BTreeMap<_, _>>(),
            }),
        });
    }

    // Entropy-mixture bound.
    {
        let mut violations = 0;
        let mut min_gap = f64::INFINITY;
        for _ in 0..1000 {
            let n = rng.gen_range(1..12);
            let p1 = random_distribution(n, &mut rng);
            let p2 = random_distribution(n, &mut rng);
            let c = rng.gen::<f64>();
            let r = entropy_mixture_check(&p1, &p2, c)?;
            min_gap = min_gap.min(r.lhs - r.rhs);
            violations += (!r.holds) as usize;
        }
        checks.push(CheckResult {
            name: "entropy_mixture_bound".into(),
            cases: 1000,
            violations,
            max_error: (-min_gap).max(0.0),
            details: serde_json::json!({ "min_lhs_minus_rhs": min_gap }),
        });
    }

    // Decomposition round trip.
    {
        let mut violations = 0;
        for i in 0..1000 {
            let maze = generate_maze(seed ^ (i as u64), 6, 6, 0.2);
            let spec = GaMdpSpec::new(maze, 40, 1.0)?;
            let start = spec.state_at(Cell::new(rng.gen_range(0..6), rng.gen_range(0..6)));
            let traj = random_walk(&spec, start, rng.gen_range(1..=40), &mut rng)?;
            let pats = decompose_trajectory(&traj, &spec)?;
            let back = replay(&pats, start, &spec)?;
            let same_goals = back.states.iter().map(|s| s.pos.key()).eq(traj.states.iter().map(|s| s.pos.key()));
            if back.actions != traj.actions || !same_goals {
                violations += 1;
            }
        }
        checks.push(CheckResult {
            name: "decompose_replay_round_trip".into(),
            cases: 1000,
            violations,
            max_error: 0.0,
            details: serde_json::Value::Null,
        });
    }

    // Pattern substitution never exceeds the exploration horizon.
    {
        let te = 12;
        let mut violations = 0;
        let mut cases = 0;
        let mut saved = 0usize;
        for m in 0..10 {
            let maze = generate_maze(seed.wrapping_add(100 + m), 5, 5, 0.3);
            let spec = GaMdpSpec::new(maze, te, 1.0)?;
            let trajs: Vec<Trajectory> = (0..300)
                .map(|_| {
                    let start = spec.state_at(Cell::new(rng.gen_range(0..5), rng.gen_range(0..5)));
                    random_walk(&spec, start, te, &mut rng)
                })
                .collect::<Result<_>>()?;
            let decomps: Vec<Vec<GoalTransitionPattern>> = trajs.iter().map(|t| decompose_trajectory(t, &spec)).collect::<Result<_>>()?;
            let library: Vec<GoalTransitionPattern> = decomps.iter().flatten().cloned().collect();
            for d in &decomps {
                let (_, total) = substitute_patterns(d, &library)?;
                cases += 1;
                saved += te - total.min(te);
                violations += (total > te) as usize;
            }
        }
        let (hand_before, hand_after) = substitution_fixture()?;
        violations += (hand_after + 1 != hand_before) as usize;
        checks.push(CheckResult {
            name: "substitution_within_horizon".into(),
            cases: cases + 1,
            violations,
            max_error: 0.0,
            details: serde_json::json!({ "mean_steps_saved": saved as f64 / cases as f64, "fixture_steps": [hand_before, hand_after] }),
        });
    }

    // Cluster invariance of I + H.
    {
        let spec = corridor_fixture(false);
        let ts = enumerate_trajectories(&spec, spec.reset(), 2, &uniform_policy(4))?;
        let n = ts.trajectories.len();
        let mut violations = 0;
        let mut max_error: f64 = 0.0;
        let baseline = cluster_equivalence(&ts, &(0..n).collect::<Vec<_>>())?;
        for _ in 0..100 {
            let k = rng.gen_range(1..=n);
            let clustering: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let r = cluster_equivalence(&ts, &clustering)?;
            max_error = max_error.max(((r.i_zg + r.h_g_given_z) - (r.i_omega_g + r.h_g_given_omega)).abs());
            violations += (!r.sums_equal) as usize;
        }
        // The sum is also the entropy of the exploration goal marginal.
        let pe = enumerate_pe(&spec, spec.reset(), 2, &uniform_policy(4))?;
        let h_pe = entropy(&pe.values().copied().collect::<Vec<_>>());
        let identity_err = (h_pe - baseline.i_omega_g - baseline.h_g_given_omega).abs();
        violations += (identity_err > 1e-9) as usize;
        checks.push(CheckResult {
            name: "cluster_sum_preservation".into(),
            cases: 101,
            violations,
            max_error: max_error.max(identity_err),
            details: serde_json::json!({
                "trajectories": n,
                "entropy_pe": h_pe,
                "i_omega_g": baseline.i_omega_g,
                "h_g_given_omega": baseline.h_g_given_omega,
            }),
        });
    }

    let passed = checks.iter().all(|c| c.violations == 0);
    Ok(OracleReport {
        seed,
        checks,
        seconds: clock.elapsed().as_secs_f64(),
        passed,
    })
}

/// From the top-left corner of an open 3×3 maze, the plan `[Up (blocked),
/// Right]` is matched against a library holding the single step `[Right]`.
/// Returns the plan lengths before and after substitution.
pub fn substitution_fixture() -> Result<(usize, usize)> {
    let spec = GaMdpSpec::new(MazeSpec::open(3, 3, Cell::new(0, 2))?, 10, 1.0)?;
    let start = spec.reset();
    let up = Dir::Up.index();
    let right = Dir::Right.index();
    let mut long = Trajectory::start(start);
    let s1 = spec.step_index(&start, up)?;
    long.push(up, s1, None);
    let s2 = spec.step_index(&s1, right)?;
    long.push(right, s2, None);
    let mut short = Trajectory::start(start);
    short.push(right, spec.step_index(&start, right)?, None);
    let decomp = decompose_trajectory(&long, &spec)?;
    let library = decompose_trajectory(&short, &spec)?;
    let before = decomp.iter().map(GoalTransitionPattern::cardinality).sum();
    let (_, after) = substitute_patterns(&decomp, &library)?;
    Ok((before, after))
}

/// Monte Carlo estimate of the exploration goal distribution.
pub fn sample_pe(spec: &GaMdpSpec, start: EnvState, horizon: usize, policy: Policy, samples: usize, seed: u64) -> Result<BTreeMap<Cell, f64>> {
    let mut rng = rng::Rng::seed_from_u64(seed);
    let mut pe = BTreeMap::new();
    let w = 1.0 / (horizon * samples) as f64;
    for _ in 0..samples {
        let mut s = start;
        for _ in 0..horizon {
            let probs = policy(&s);
            let mut u = rng.gen::<f64>();
            let mut a = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                if u < *p {
                    a = i;
                    break;
                }
                u -= p;
            }
            s = spec.step_index(&s, a)?;
            *pe.entry(s.cell()).or_insert(0.0) += w;
        }
    }
    Ok(pe)
}
