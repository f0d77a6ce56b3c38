//! Goal-exploration policies run after a sub-goal is reached.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvState, GaMdpSpec, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::skills::SkillSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExploreStrategy {
    Geaps,
    Random,
    None,
}

impl ExploreStrategy {
    pub const ALL: [ExploreStrategy; 3] = [Self::Geaps, Self::Random, Self::None];

    pub fn name(self) -> &'static str {
        match self {
            Self::Geaps => "geaps",
            Self::Random => "random",
            Self::None => "none",
        }
    }
}

impl fmt::Display for ExploreStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExploreStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid(format!("unknown exploration strategy `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreConfig {
    /// `T^e`.
    pub horizon: usize,
    /// `T^s`.
    pub skill_horizon: usize,
}

impl ExploreConfig {
    pub fn new(horizon: usize, skill_horizon: usize) -> Result<Self> {
        if skill_horizon < 1 {
            return Err(invalid("skill horizon must be at least 1"));
        }
        Ok(Self { horizon, skill_horizon })
    }
}

/// Steps actually available from `start`: `min(T^e, T - t)`.
fn budget(start: &EnvState, horizon: usize, spec: &GaMdpSpec) -> usize {
    horizon.min(spec.horizon().saturating_sub(start.step_index))
}

/// Skill-switching rollout: a skill is drawn from the prior whenever
/// `t mod T^s = 0` and actions follow `π_Z(obs, z)`. Transitions carry no
/// goal label.
pub fn geaps_rollout<R: Rng + ?Sized>(start: EnvState, cfg: &ExploreConfig, skills: &SkillSet, spec: &GaMdpSpec, rng: &mut R) -> Result<Trajectory> {
    geaps_rollout_traced(start, cfg, skills, spec, rng).map(|(t, _)| t)
}

/// As [`geaps_rollout`], also returning each `(t, z)` skill draw.
pub fn geaps_rollout_traced<R: Rng + ?Sized>(
    start: EnvState,
    cfg: &ExploreConfig,
    skills: &SkillSet,
    spec: &GaMdpSpec,
    rng: &mut R,
) -> Result<(Trajectory, Vec<(usize, usize)>)> {
    if skills.n_actions != spec.action_count() || skills.continuous != spec.is_continuous() {
        return Err(invalid("skill set was trained for a different maze kind"));
    }
    if skills.skill_horizon != cfg.skill_horizon {
        return Err(invalid(format!(
            "skill horizon {} does not match exploration skill horizon {}",
            skills.skill_horizon, cfg.skill_horizon
        )));
    }
    let n = budget(&start, cfg.horizon, spec);
    let mut traj = Trajectory::start(start);
    let mut draws = Vec::with_capacity(n.div_ceil(cfg.skill_horizon));
    let mut s = start;
    let mut z = 0;
    for t in 0..n {
        if t % cfg.skill_horizon == 0 {
            z = skills.sample_skill(rng);
            draws.push((t, z));
        }
        let a = skills.sample_action(&spec.agent_obs(&s), z, rng);
        s = spec.step_index(&s, a)?;
        traj.push(a, s, None);
    }
    Ok((traj, draws))
}

/// Uniform-random actions for up to `horizon` steps.
pub fn random_rollout<R: Rng + ?Sized>(start: EnvState, horizon: usize, spec: &GaMdpSpec, rng: &mut R) -> Result<Trajectory> {
    let n = budget(&start, horizon, spec);
    let mut traj = Trajectory::start(start);
    let mut s = start;
    for _ in 0..n {
        let a = rng.gen_range(0..spec.action_count());
        s = spec.step_index(&s, a)?;
        traj.push(a, s, None);
    }
    Ok(traj)
}
