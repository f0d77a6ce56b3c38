//! Experiment orchestration: configuration, the iteration loop, reporting
//! and multi-seed sweeps.

mod config;
mod experiment;
mod report;

use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub use config::{AgentConfig, EnvConfig, ExperimentConfig, ExploreSection, RunConfig, SubgoalConfig};
pub use experiment::{
    mixture_coefficient, run_experiment, run_experiment_with, Experiment, ExperimentResult, IterationRecord, MetricRecord,
    PROP1_TOLERANCE,
};
pub use report::{
    curves_svg, heatmap_svg, median, median_curves, metrics_jsonl, read_metrics, read_result, write_plots, write_run,
    write_summary, SummaryRow, COVERAGE_FILE, CURVES_FILE, HEATMAP_FILE, METRICS_FILE, RESULT_FILE, SUMMARY_FILE,
};

use crate::env::generate_pretrain_suite;
use crate::error::Result;
use crate::explore::ExploreStrategy;
use crate::skills::{train_skills, SkillSet, SkillTrainConfig};
use crate::subgoal::SubgoalStrategy;

/// Number of mazes in the pre-training suite.
pub const PRETRAIN_SUITE_COUNT: usize = 20;
/// Side length of each pre-training maze.
pub const PRETRAIN_MAZE_SIZE: usize = 5;

/// Trains skills on the standard suite drawn from `suite_seed`.
pub fn pretrain(suite_seed: u64, cfg: &SkillTrainConfig, continuous: bool) -> Result<SkillSet> {
    let suite: Vec<_> = generate_pretrain_suite(suite_seed, PRETRAIN_SUITE_COUNT, PRETRAIN_MAZE_SIZE)?
        .into_iter()
        .map(|m| m.with_continuous(continuous))
        .collect();
    train_skills(&suite, cfg)
}

/// Loads `config`, optionally overrides its seed, runs it and writes the run
/// outputs plus a one-row summary and plots into `out`.
pub fn train(config: &Path, seed: Option<u64>, out: &Path) -> Result<ExperimentResult> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.run.seed = seed;
    }
    let result = run_experiment(&cfg)?;
    write_run(out, &result)?;
    write_plots(out, std::slice::from_ref(&result))?;
    Ok(result)
}

/// Output directory of one sweep member.
pub fn run_dir(out: &Path, cfg: &ExperimentConfig) -> PathBuf {
    out.join(cfg.label()).join(format!("seed-{}", cfg.run.seed))
}

/// Every `(subgoal, explore, seed)` combination of `base`.
pub fn sweep_configs(base: &ExperimentConfig, subgoals: &[SubgoalStrategy], explores: &[ExploreStrategy], seeds: &[u64]) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for s in subgoals {
        for e in explores {
            for seed in seeds {
                let mut cfg = base.clone();
                cfg.subgoal.strategy = *s;
                cfg.explore.strategy = *e;
                cfg.run.seed = *seed;
                out.push(cfg);
            }
        }
    }
    out
}

/// Runs configurations on up to `workers` threads. Results come back in
/// input order; each run is independent of scheduling.
pub fn run_many(configs: &[ExperimentConfig], skills: Option<&SkillSet>, workers: usize) -> Result<Vec<ExperimentResult>> {
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<Result<ExperimentResult>>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("index lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(cfg) = configs.get(i) else { break };
                let s = (cfg.explore.strategy == ExploreStrategy::Geaps).then(|| skills.cloned()).flatten();
                *slots[i].lock().expect("slot lock") = Some(run_experiment_with(cfg, s));
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot is filled"))
        .collect()
}

/// Runs a sweep, writing each run under `out/<label>/seed-<n>/` and the
/// summary and plots under `out/`.
pub fn sweep(configs: &[ExperimentConfig], skills: Option<&SkillSet>, workers: usize, out: &Path) -> Result<Vec<ExperimentResult>> {
    let results = run_many(configs, skills, workers)?;
    for (cfg, r) in configs.iter().zip(&results) {
        write_run(&run_dir(out, cfg), r)?;
    }
    write_plots(out, &results)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential() {
        let base = ExperimentConfig::from_toml(
            "[env]\nwidth = 4\nheight = 4\n[agent]\nbatch_size = 8\n[run]\ntotal_steps = 800\neval_every = 200\neval_episodes = 4\n",
        )
        .unwrap();
        let cfgs = sweep_configs(&base, &[SubgoalStrategy::Mega, SubgoalStrategy::Uniform], &[ExploreStrategy::Random], &[0, 1]);
        assert_eq!(cfgs.len(), 4);
        let par = run_many(&cfgs, None, 3).unwrap();
        for (cfg, r) in cfgs.iter().zip(&par) {
            let seq = run_experiment_with(cfg, None).unwrap();
            assert_eq!(metrics_jsonl(&seq.records).unwrap(), metrics_jsonl(&r.records).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        sweep(&cfgs, None, 2, dir.path()).unwrap();
        assert!(dir.path().join("uniform+random/seed-1").join(METRICS_FILE).exists());
        assert!(dir.path().join(SUMMARY_FILE).exists());
    }

    #[test]
    fn train_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let skills = pretrain(0, &SkillTrainConfig { iterations: 5, batch_episodes: 8, ..Default::default() }, false).unwrap();
        skills.save(&dir.path().join("skills.json")).unwrap();
        let cfg = dir.path().join("exp.toml");
        std::fs::write(
            &cfg,
            "[env]\nwidth = 4\nheight = 4\n[explore]\nstrategy = \"geaps\"\nskills = \"skills.json\"\n\
             [agent]\nbatch_size = 8\n[run]\ntotal_steps = 400\neval_every = 100\neval_episodes = 4\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let r = train(&cfg, Some(5), &out).unwrap();
        assert_eq!(r.seed, 5);
        for f in [METRICS_FILE, RESULT_FILE, COVERAGE_FILE, SUMMARY_FILE, CURVES_FILE, HEATMAP_FILE] {
            assert!(out.join(f).exists(), "{f}");
        }
        assert_eq!(read_metrics(&out.join(METRICS_FILE)).unwrap(), r.records);
    }
}
