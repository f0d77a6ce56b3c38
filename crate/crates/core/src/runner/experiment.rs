//! The iteration loop: sub-goal selection, pursuit, triggered exploration,
//! replay bookkeeping and learning, plus periodic evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::{act, q_update, relabel, sample_batch, GoalPools, QTable, RelabelRatios, ReplayBuffer};
use crate::density::{Histogram, NormalizedKde, KDE_MAX_SAMPLES};
use crate::env::{Cell, GaMdpSpec, Goal, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::explore::{geaps_rollout, random_rollout, ExploreConfig, ExploreStrategy};
use crate::oracle::{entropy_mixture_check, MixtureCheck};
use crate::rng::{stream, Rng, Stream};
use crate::skills::SkillSet;
use crate::subgoal::{
    estimate_kl, goid_select_from, mega_select, omega_alpha, omega_select, skewfit_select, uniform_select,
    OmegaParams, SubgoalStrategy, SuccessTable, KL_SAMPLES,
};

use super::config::ExperimentConfig;

/// Consecutive zero-step iterations tolerated before the run is aborted.
const MAX_IDLE_ITERATIONS: usize = 1000;

/// Tolerance of the in-run mixture entropy check.
pub const PROP1_TOLERANCE: f64 = 1e-9;

/// `c = (|B| + T^c) / (|B| + T^c + T^e)`.
pub fn mixture_coefficient(buffer_size: usize, t_c: usize, t_e: usize) -> Result<f64> {
    let num = buffer_size + t_c;
    let den = num + t_e;
    if den == 0 {
        return Err(invalid("mixture coefficient has a zero denominator"));
    }
    Ok(num as f64 / den as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub subgoal: Goal,
    pub pursuit_steps: usize,
    pub explore_steps: usize,
    pub goal_reached: bool,
    pub c: f64,
    /// Achieved-goal histogram entropy of the buffer after this iteration.
    pub entropy_now: f64,
    /// Most recent evaluated success rate.
    pub success_eval: f64,
    /// Mixture entropy check, when both components are non-empty.
    pub prop1: Option<MixtureCheck>,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub eval_index: usize,
    pub steps: usize,
    pub iteration: usize,
    pub subgoal: Goal,
    pub pursuit_steps: usize,
    pub explore_steps: usize,
    pub goal_reached: bool,
    pub c: f64,
    pub entropy_now: f64,
    pub success_eval: f64,
    pub coverage: f64,
    pub prop1_checks: usize,
    pub prop1_violations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub label: String,
    pub seed: u64,
    pub records: Vec<MetricRecord>,
    pub total_steps: usize,
    pub iterations: usize,
    pub prop1_checks: usize,
    pub prop1_violations: usize,
    /// Achieved-goal counts per cell in the final buffer.
    pub cell_counts: Vec<(Cell, u64)>,
    pub width: i32,
    pub height: i32,
}

impl ExperimentResult {
    pub fn final_record(&self) -> Option<&MetricRecord> {
        self.records.last()
    }

    /// Environment steps at the first evaluation with perfect success.
    pub fn steps_to_full_success(&self) -> Option<usize> {
        self.records.iter().find(|r| r.success_eval >= 1.0).map(|r| r.steps)
    }
}

pub struct Experiment {
    cfg: ExperimentConfig,
    spec: GaMdpSpec,
    ratios: RelabelRatios,
    skills: Option<SkillSet>,
    q: QTable,
    buffer: ReplayBuffer,
    pools: GoalPools,
    table: SuccessTable,
    rng_pursuit: Rng,
    rng_explore: Rng,
    rng_subgoal: Rng,
    rng_learner: Rng,
    rng_eval: Rng,
    rng_desired: Rng,
    steps: usize,
    iteration: usize,
    idle: usize,
    success_eval: f64,
    prop1_checks: usize,
    prop1_violations: usize,
}

impl Experiment {
    /// `skills` is required for GEAPS exploration and ignored otherwise.
    pub fn new(cfg: ExperimentConfig, skills: Option<SkillSet>) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.spec()?;
        if cfg.explore.strategy == ExploreStrategy::Geaps {
            let s = skills.as_ref().ok_or_else(|| Error::Config("geaps exploration needs a skill artifact".into()))?;
            if s.skill_horizon != cfg.explore.skill_horizon {
                return Err(Error::Config(format!(
                    "skill artifact has skill horizon {}, config says {}",
                    s.skill_horizon, cfg.explore.skill_horizon
                )));
            }
            if s.continuous != spec.is_continuous() || s.n_actions != spec.action_count() {
                return Err(Error::Config("skill artifact was trained for a different maze kind".into()));
            }
        }
        let seed = cfg.run.seed;
        Ok(Self {
            ratios: cfg.relabel()?,
            q: QTable::new(&spec, cfg.agent.lr, cfg.agent.gamma)?,
            buffer: ReplayBuffer::new(cfg.agent.buffer_capacity),
            pools: GoalPools::new(cfg.agent.pool_capacity),
            table: SuccessTable::new(cfg.subgoal.goid_window),
            skills: if cfg.explore.strategy == ExploreStrategy::Geaps { skills } else { None },
            rng_pursuit: stream(seed, Stream::Pursuit),
            rng_explore: stream(seed, Stream::Explore),
            rng_subgoal: stream(seed, Stream::Subgoal),
            rng_learner: stream(seed, Stream::Learner),
            rng_eval: stream(seed, Stream::Eval),
            rng_desired: stream(seed, Stream::Desired),
            steps: 0,
            iteration: 0,
            idle: 0,
            success_eval: 0.0,
            prop1_checks: 0,
            prop1_violations: 0,
            spec,
            cfg,
        })
    }

    pub fn spec(&self) -> &GaMdpSpec {
        &self.spec
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn prop1_counts(&self) -> (usize, usize) {
        (self.prop1_checks, self.prop1_violations)
    }

    fn select_subgoal(&mut self, desired: Goal) -> Result<Goal> {
        if self.buffer.is_empty() {
            return Ok(desired);
        }
        let s = &self.cfg.subgoal;
        let rng = &mut self.rng_subgoal;
        match s.strategy {
            SubgoalStrategy::Goid => {
                let estimates: Vec<(Cell, f64)> = self
                    .buffer
                    .cell_counts()
                    .keys()
                    .map(|c| {
                        let (n, k) = self.table.get(*c);
                        (*c, if n == 0 { 0.5 } else { k as f64 / n as f64 })
                    })
                    .collect();
                let cell = goid_select_from(&estimates, s.goid_r_min, s.goid_r_max, rng)?;
                Ok(self.spec.cell_goal(cell))
            }
            SubgoalStrategy::Uniform => {
                let goals = self.buffer.subsample_achieved(KDE_MAX_SAMPLES, rng);
                uniform_select(&goals, rng)
            }
            strategy => {
                let goals = self.buffer.subsample_achieved(KDE_MAX_SAMPLES, rng);
                let model = NormalizedKde::fit(&goals, s.bandwidth, rng)?;
                match strategy {
                    SubgoalStrategy::Mega => mega_select(&goals, &model, rng),
                    SubgoalStrategy::Skewfit => skewfit_select(&goals, &model, s.skew_exponent, rng),
                    _ => {
                        let spec = &self.spec;
                        let samples: Vec<Goal> = (0..KL_SAMPLES).map(|_| spec.sample_desired(rng)).collect();
                        let kl = estimate_kl(&samples, &model, s.bandwidth)?;
                        let params = OmegaParams {
                            b: s.omega_b,
                            alpha: omega_alpha(kl, s.omega_b),
                        };
                        omega_select(&params, |r: &mut Rng| spec.sample_desired(r), &goals, &model, rng)
                    }
                }
            }
        }
    }

    /// Runs `π^c` towards `goal` for at most `limit` steps.
    fn pursue(&mut self, goal: Goal, limit: usize) -> Result<(Trajectory, bool)> {
        let mut s = self.spec.reset();
        let mut traj = Trajectory::start(s);
        let mut reached = self.spec.goal_reached(GaMdpSpec::achieved_goal(&s), goal);
        while !reached && traj.len() < limit {
            let a = act(&self.q, &self.spec, &s, goal, self.cfg.agent.epsilon, &mut self.rng_pursuit);
            s = self.spec.step_index(&s, a)?;
            traj.push(a, s, Some(goal));
            reached = self.spec.goal_reached(GaMdpSpec::achieved_goal(&s), goal);
        }
        Ok((traj, reached))
    }

    /// Histogram check of `H(c·p_ag + (1−c)·p_e) ≥ c·H(p_ag) + (1−c)·H(p_e)`
    /// where `p_ag` pools the buffer with the pursuit states and `p_e`
    /// covers the exploration states.
    fn prop1_check(&self, traj: &Trajectory, t_c: usize, c: f64) -> Result<Option<MixtureCheck>> {
        let mut ag: BTreeMap<Cell, f64> = self.buffer.cell_counts().iter().map(|(k, v)| (*k, *v as f64)).collect();
        let mut pe: BTreeMap<Cell, f64> = BTreeMap::new();
        for (i, s) in traj.states.iter().enumerate().skip(1) {
            let m = if i <= t_c { &mut ag } else { &mut pe };
            *m.entry(s.cell()).or_insert(0.0) += 1.0;
        }
        if ag.is_empty() || pe.is_empty() {
            return Ok(None);
        }
        let support: Vec<Cell> = ag.keys().chain(pe.keys()).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let normalize = |m: &BTreeMap<Cell, f64>| {
            let total: f64 = m.values().sum();
            support.iter().map(|c| m.get(c).copied().unwrap_or(0.0) / total).collect::<Vec<f64>>()
        };
        let mut check = entropy_mixture_check(&normalize(&ag), &normalize(&pe), c)?;
        check.holds = check.lhs >= check.rhs - PROP1_TOLERANCE;
        Ok(Some(check))
    }

    fn learn(&mut self, steps: usize) -> Result<()> {
        let n = steps * self.cfg.agent.updates_per_step;
        for _ in 0..n {
            let batch = sample_batch(&self.buffer, self.cfg.agent.batch_size, &mut self.rng_learner)?;
            let labelled = relabel(&batch, &self.ratios, &self.pools, &self.buffer, &mut self.rng_learner);
            q_update(&mut self.q, &labelled, &self.spec);
        }
        Ok(())
    }

    pub fn run_iteration(&mut self) -> Result<IterationRecord> {
        let horizon = self.spec.horizon();
        let desired = self.spec.sample_desired(&mut self.rng_desired);
        self.pools.push_actual(desired);
        let goal = self.select_subgoal(desired)?;
        self.pools.push_behavioral(goal);

        let limit = self.cfg.explore.pursuit_limit.unwrap_or(horizon);
        let (mut traj, reached) = self.pursue(goal, limit)?;
        let t_c = traj.len();
        let triggered = reached || self.cfg.explore.on_timeout;
        if triggered && t_c < horizon {
            let x = ExploreConfig::new(horizon - t_c, self.cfg.explore.skill_horizon)?;
            let start = traj.last_state();
            let tail = match (self.cfg.explore.strategy, &self.skills) {
                (ExploreStrategy::Geaps, Some(skills)) => Some(geaps_rollout(start, &x, skills, &self.spec, &mut self.rng_explore)?),
                (ExploreStrategy::Random, _) => Some(random_rollout(start, x.horizon, &self.spec, &mut self.rng_explore)?),
                _ => None,
            };
            if let Some(tail) = tail {
                traj.extend(&tail);
            }
        }
        let t_e = traj.len() - t_c;

        let total = t_c + t_e;
        if total == 0 {
            self.idle += 1;
            if self.idle >= MAX_IDLE_ITERATIONS {
                return Err(invalid("sub-goals are reached at the start state and nothing explores"));
            }
        } else {
            self.idle = 0;
        }
        let c = if total == 0 { 1.0 } else { mixture_coefficient(self.buffer.len(), t_c, t_e)? };
        let prop1 = self.prop1_check(&traj, t_c, c)?;
        if let Some(p) = &prop1 {
            self.prop1_checks += 1;
            self.prop1_violations += !p.holds as usize;
        }

        if total > 0 {
            self.buffer.push_trajectory(&traj)?;
        }
        self.table.record(goal.cell(), reached);
        self.steps += total;
        self.learn(total)?;

        let record = IterationRecord {
            iteration: self.iteration,
            subgoal: goal,
            pursuit_steps: t_c,
            explore_steps: t_e,
            goal_reached: reached,
            c,
            entropy_now: self.entropy()?,
            success_eval: self.success_eval,
            prop1,
        };
        self.iteration += 1;
        Ok(record)
    }

    /// Histogram entropy of buffered achieved goals over unit cells.
    pub fn entropy(&self) -> Result<f64> {
        if self.buffer.is_empty() {
            return Ok(0.0);
        }
        let counts = self.buffer.cell_counts().iter().map(|(c, n)| ((c.x as i64, c.y as i64), *n)).collect();
        Ok(Histogram::from_counts(1.0, counts)?.entropy())
    }

    /// Fraction of reachable cells present in the buffer.
    pub fn coverage(&self) -> f64 {
        let reachable = self.spec.maze().reachable_from(self.spec.maze().start()).len();
        self.buffer.cell_counts().len() as f64 / reachable as f64
    }

    /// Greedy episodes against fresh desired goals; success means reaching
    /// the goal within the horizon.
    pub fn evaluate(&mut self) -> Result<f64> {
        let n = self.cfg.run.eval_episodes;
        let mut wins = 0;
        for _ in 0..n {
            let goal = self.spec.sample_desired(&mut self.rng_eval);
            let mut s = self.spec.reset();
            let mut reached = self.spec.goal_reached(GaMdpSpec::achieved_goal(&s), goal);
            while !reached && s.step_index < self.spec.horizon() {
                let a = act(&self.q, &self.spec, &s, goal, 0.0, &mut self.rng_eval);
                s = self.spec.step_index(&s, a)?;
                reached = self.spec.goal_reached(GaMdpSpec::achieved_goal(&s), goal);
            }
            wins += reached as usize;
        }
        self.success_eval = wins as f64 / n as f64;
        Ok(self.success_eval)
    }

    fn metric(&self, eval_index: usize, it: &IterationRecord) -> MetricRecord {
        MetricRecord {
            eval_index,
            steps: self.steps,
            iteration: it.iteration,
            subgoal: it.subgoal,
            pursuit_steps: it.pursuit_steps,
            explore_steps: it.explore_steps,
            goal_reached: it.goal_reached,
            c: it.c,
            entropy_now: it.entropy_now,
            success_eval: self.success_eval,
            coverage: self.coverage(),
            prop1_checks: self.prop1_checks,
            prop1_violations: self.prop1_violations,
        }
    }

    /// Iterates until the step budget is spent, evaluating each time the
    /// step count crosses a multiple of the cadence and once at the end.
    /// `on_record` sees every metric record as it is produced.
    pub fn run<F: FnMut(&MetricRecord)>(mut self, mut on_record: F) -> Result<ExperimentResult> {
        let (budget, every) = (self.cfg.run.total_steps, self.cfg.run.eval_every);
        let mut records = Vec::new();
        let mut next_eval = every;
        while self.steps < budget {
            let it = self.run_iteration()?;
            if self.steps >= next_eval || self.steps >= budget {
                self.evaluate()?;
                let m = self.metric(records.len(), &it);
                on_record(&m);
                records.push(m);
                next_eval = (self.steps / every + 1) * every;
            }
        }
        let maze = self.spec.maze();
        Ok(ExperimentResult {
            label: self.cfg.label(),
            seed: self.cfg.run.seed,
            records,
            total_steps: self.steps,
            iterations: self.iteration,
            prop1_checks: self.prop1_checks,
            prop1_violations: self.prop1_violations,
            cell_counts: self.buffer.cell_counts().iter().map(|(c, n)| (*c, *n)).collect(),
            width: maze.width() as i32,
            height: maze.height() as i32,
        })
    }
}

/// Runs a configuration, loading the skill artifact it names.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let skills = match (&cfg.explore.strategy, &cfg.explore.skills) {
        (ExploreStrategy::Geaps, Some(path)) => Some(SkillSet::load(path)?),
        _ => None,
    };
    run_experiment_with(cfg, skills)
}

pub fn run_experiment_with(cfg: &ExperimentConfig, skills: Option<SkillSet>) -> Result<ExperimentResult> {
    Experiment::new(cfg.clone(), skills)?.run(|_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skills::{train_skills, SkillTrainConfig};

    fn small(strategy: &str, explore: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "[env]\nwidth = 5\nheight = 5\n[subgoal]\nstrategy = \"{strategy}\"\n[explore]\nstrategy = \"{explore}\"\n\
             [agent]\nbatch_size = 16\n[run]\ntotal_steps = 3000\neval_every = 500\neval_episodes = 10\nseed = 1\n"
        ))
        .unwrap()
    }

    fn pretrained() -> SkillSet {
        let suite = crate::env::generate_pretrain_suite(0, 1, 5).unwrap();
        let cfg = SkillTrainConfig { iterations: 20, batch_episodes: 16, ..Default::default() };
        train_skills(&suite, &cfg).unwrap()
    }

    proptest::proptest! {
        #[test]
        fn mixture_coefficient_is_a_weight(b in 0usize..1_000_000, tc in 0usize..60, te in 0usize..60) {
            proptest::prop_assume!(b + tc + te > 0);
            let c = mixture_coefficient(b, tc, te).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&c));
            proptest::prop_assert_eq!(c == 1.0, te == 0);
        }
    }

    #[test]
    fn mixture_coefficient_cases() {
        assert_eq!(mixture_coefficient(0, 0, 10).unwrap(), 0.0);
        assert_eq!(mixture_coefficient(37, 5, 0).unwrap(), 1.0);
        let oracle = 120.0 / 150.0;
        assert!((mixture_coefficient(100, 20, 30).unwrap() - oracle).abs() < 1e-15);
        assert!(mixture_coefficient(0, 0, 0).is_err());
    }

    #[test]
    fn iteration_accounting() {
        for strategy in SubgoalStrategy::ALL {
            let mut exp = Experiment::new(small(strategy.name(), "random"), None).unwrap();
            let mut consumed = 0;
            for _ in 0..40 {
                let before = exp.buffer().len();
                let r = exp.run_iteration().unwrap();
                assert!(r.pursuit_steps + r.explore_steps <= 50);
                assert!(r.explore_steps == 0 || r.goal_reached);
                if !r.goal_reached {
                    assert_eq!(r.pursuit_steps, 50);
                }
                assert!((0.0..=1.0).contains(&r.c));
                assert_eq!(exp.buffer().len(), before + r.pursuit_steps + r.explore_steps);
                consumed += r.pursuit_steps + r.explore_steps;
            }
            assert_eq!(consumed, exp.steps());
        }
    }

    #[test]
    fn reach_triggers_exploration_for_remaining_budget() {
        let mut exp = Experiment::new(small("uniform", "random"), None).unwrap();
        for _ in 0..60 {
            let r = exp.run_iteration().unwrap();
            if r.goal_reached {
                assert_eq!(r.pursuit_steps + r.explore_steps, 50);
            }
        }
    }

    #[test]
    fn no_exploration_strategy() {
        let mut exp = Experiment::new(small("mega", "none"), None).unwrap();
        for _ in 0..20 {
            assert_eq!(exp.run_iteration().unwrap().explore_steps, 0);
        }
    }

    #[test]
    fn timeout_flag_explores_after_limit() {
        let mut cfg = small("mega", "random");
        cfg.explore.pursuit_limit = Some(10);
        cfg.explore.on_timeout = true;
        let mut exp = Experiment::new(cfg, None).unwrap();
        for _ in 0..20 {
            let r = exp.run_iteration().unwrap();
            assert!(r.pursuit_steps <= 10);
            assert_eq!(r.pursuit_steps + r.explore_steps, 50);
        }
    }

    #[test]
    fn geaps_needs_matching_skills() {
        assert!(Experiment::new(small("mega", "geaps"), None).is_err());
        let mut skills = pretrained();
        skills.skill_horizon = 3;
        assert!(Experiment::new(small("mega", "geaps"), Some(skills)).is_err());
    }

    #[test]
    fn run_is_deterministic_and_bounded() {
        let skills = pretrained();
        let cfg = small("mega", "geaps");
        let a = run_experiment_with(&cfg, Some(skills.clone())).unwrap();
        let b = run_experiment_with(&cfg, Some(skills)).unwrap();
        assert_eq!(serde_json::to_string(&a.records).unwrap(), serde_json::to_string(&b.records).unwrap());
        assert!(a.total_steps >= 3000 && a.total_steps < 3050);
        assert_eq!(a.records.len(), 6);
        for r in &a.records {
            assert!((0.0..=1.0).contains(&r.success_eval));
            assert!((0.0..=1.0).contains(&r.coverage));
        }
        assert_eq!(a.prop1_violations, 0);
        assert!(a.prop1_checks > 0);
    }

    #[test]
    fn entropy_trend_on_open_maze() {
        let cfg = ExperimentConfig::from_toml(
            "[env]\nwidth = 8\nheight = 8\nloop_prob = 1.0\n[explore]\nstrategy = \"random\"\n\
             [agent]\nbatch_size = 16\n[run]\ntotal_steps = 6000\neval_every = 300\neval_episodes = 5\n",
        )
        .unwrap();
        let res = run_experiment_with(&cfg, None).unwrap();
        let xs: Vec<f64> = res.records.iter().map(|r| r.steps as f64).collect();
        let ys: Vec<f64> = res.records.iter().map(|r| r.entropy_now).collect();
        assert!(spearman(&xs, &ys) > 0.0);
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }

    fn spearman(x: &[f64], y: &[f64]) -> f64 {
        let (rx, ry) = (ranks(x), ranks(y));
        let n = x.len() as f64;
        let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }
}
