//! Experiment configuration, read from TOML with dotted sections.
//!
//! ```toml
//! [env]
//! width = 10
//! height = 10
//! loop_prob = 0.2
//! horizon = 50
//!
//! [subgoal]
//! strategy = "mega"
//!
//! [explore]
//! strategy = "geaps"
//! skill_horizon = 2
//! skills = "skills.json"
//!
//! [agent]
//! relabel = "rfaab_1_4_3_1_1"
//!
//! [run]
//! total_steps = 300000
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{RelabelRatios, BATCH_SIZE, EPSILON, LEARNING_RATE, POOL_CAPACITY};
use crate::density::KDE_BANDWIDTH;
use crate::env::{generate_maze, parse_maze, GaMdpSpec, MazeSpec};
use crate::error::{Error, Result};
use crate::explore::ExploreStrategy;
use crate::subgoal::{SubgoalStrategy, GOID_R_MAX, GOID_R_MIN, GOID_WINDOW, OMEGA_B, SKEWFIT_EXPONENT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Plain-text maze file; when absent a maze is generated.
    pub maze_file: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub loop_prob: f64,
    /// Generator seed; defaults to the run seed.
    pub maze_seed: Option<u64>,
    pub continuous: bool,
    pub horizon: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            maze_file: None,
            width: 10,
            height: 10,
            loop_prob: 0.2,
            maze_seed: None,
            continuous: false,
            horizon: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubgoalConfig {
    pub strategy: SubgoalStrategy,
    pub bandwidth: f64,
    pub omega_b: f64,
    pub skew_exponent: f64,
    pub goid_window: usize,
    pub goid_r_min: f64,
    pub goid_r_max: f64,
}

impl Default for SubgoalConfig {
    fn default() -> Self {
        Self {
            strategy: SubgoalStrategy::Mega,
            bandwidth: KDE_BANDWIDTH,
            omega_b: OMEGA_B,
            skew_exponent: SKEWFIT_EXPONENT,
            goid_window: GOID_WINDOW,
            goid_r_min: GOID_R_MIN,
            goid_r_max: GOID_R_MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreSection {
    pub strategy: ExploreStrategy,
    pub skill_horizon: usize,
    /// Skill artifact, required for `geaps`.
    pub skills: Option<PathBuf>,
    /// Cap on pursuit steps; defaults to the horizon.
    pub pursuit_limit: Option<usize>,
    /// Also explore when pursuit hits `pursuit_limit` without reaching.
    pub on_timeout: bool,
}

impl Default for ExploreSection {
    fn default() -> Self {
        Self {
            strategy: ExploreStrategy::Random,
            skill_horizon: 2,
            skills: None,
            pursuit_limit: None,
            on_timeout: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub lr: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub relabel: String,
    pub batch_size: usize,
    pub updates_per_step: usize,
    pub buffer_capacity: usize,
    pub pool_capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            lr: LEARNING_RATE,
            gamma: 0.98,
            epsilon: EPSILON,
            relabel: RelabelRatios::default().to_string(),
            batch_size: BATCH_SIZE,
            updates_per_step: 1,
            buffer_capacity: 1_000_000,
            pool_capacity: POOL_CAPACITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            total_steps: 300_000,
            eval_every: 5_000,
            eval_episodes: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub subgoal: SubgoalConfig,
    pub explore: ExploreSection,
    pub agent: AgentConfig,
    pub run: RunConfig,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative artifact paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.env.maze_file, &mut cfg.explore.skills].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn relabel(&self) -> Result<RelabelRatios> {
        self.agent.relabel.parse().map_err(|e: Error| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.env;
        if e.horizon == 0 {
            return Err(config_err("env.horizon must be positive"));
        }
        if e.maze_file.is_none() && (e.width == 0 || e.height == 0) {
            return Err(config_err("env.width and env.height must be positive"));
        }
        if !(0.0..=1.0).contains(&e.loop_prob) {
            return Err(config_err("env.loop_prob must lie in [0, 1]"));
        }
        let s = &self.subgoal;
        if !(s.bandwidth > 0.0) {
            return Err(config_err("subgoal.bandwidth must be positive"));
        }
        if s.goid_window == 0 || !(0.0..=1.0).contains(&s.goid_r_min) || !(s.goid_r_min..=1.0).contains(&s.goid_r_max) {
            return Err(config_err("subgoal GOID window and bounds are invalid"));
        }
        let x = &self.explore;
        if x.skill_horizon == 0 || x.skill_horizon >= e.horizon {
            return Err(config_err("explore.skill_horizon must lie in [1, env.horizon)"));
        }
        if x.pursuit_limit.is_some_and(|l| l == 0 || l > e.horizon) {
            return Err(config_err("explore.pursuit_limit must lie in [1, env.horizon]"));
        }
        let a = &self.agent;
        if !(0.0..=1.0).contains(&a.lr) || !(a.gamma > 0.0 && a.gamma <= 1.0) || !(0.0..=1.0).contains(&a.epsilon) {
            return Err(config_err("agent.lr, agent.gamma or agent.epsilon out of range"));
        }
        if a.batch_size == 0 || a.buffer_capacity < e.horizon || a.pool_capacity == 0 {
            return Err(config_err("agent batch size, buffer or pool capacity too small"));
        }
        self.relabel()?;
        let r = &self.run;
        if r.total_steps == 0 || r.eval_every == 0 || r.eval_episodes == 0 {
            return Err(config_err("run.total_steps, run.eval_every and run.eval_episodes must be positive"));
        }
        Ok(())
    }

    pub fn maze(&self) -> Result<MazeSpec> {
        match &self.env.maze_file {
            Some(path) => parse_maze(&std::fs::read_to_string(path)?),
            None => Ok(generate_maze(
                self.env.maze_seed.unwrap_or(self.run.seed),
                self.env.width,
                self.env.height,
                self.env.loop_prob,
            )
            .with_continuous(self.env.continuous)),
        }
    }

    pub fn spec(&self) -> Result<GaMdpSpec> {
        GaMdpSpec::new(self.maze()?, self.env.horizon, self.agent.gamma)
    }

    /// Short label such as `mega+geaps`.
    pub fn label(&self) -> String {
        format!("{}+{}", self.subgoal.strategy, self.explore.strategy)
    }
}
