use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use geaps_core::env::{parse_maze, Cell, MazeSpec};
use geaps_core::explore::ExploreStrategy;
use geaps_core::oracle::run_oracle_suite;
use geaps_core::runner::{
    pretrain, read_result, run_dir, sweep, sweep_configs, train, write_plots, ExperimentConfig, RESULT_FILE,
};
use geaps_core::skills::{skill_quality, SkillSet, SkillTrainConfig};
use geaps_core::subgoal::SubgoalStrategy;

/// Goal-exploration laboratory.
#[derive(Parser)]
#[command(name = "geaps-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train skills on the 5x5 maze suite and write the artifact.
    Pretrain(PretrainArgs),
    /// Run one experiment from a config file.
    Train(TrainArgs),
    /// Exact skill quality of an artifact as JSON.
    Eval(EvalArgs),
    /// Run the oracle suite; exits nonzero on any violation.
    Oracle(OracleArgs),
    /// Run strategy x seed grids concurrently.
    Sweep(SweepArgs),
    /// Rebuild summary.csv and the SVG plots from finished runs.
    Plot(PlotArgs),
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long, default_value_t = 0)]
    suite_seed: u64,
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Skill horizon T^s.
    #[arg(long, default_value_t = 2)]
    horizon: usize,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    /// Training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    continuous: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    skills: PathBuf,
    /// Maze file; defaults to an open 5x5 maze started at its centre.
    #[arg(long)]
    maze: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Base config; strategies and seeds are overridden per run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "mega")]
    subgoals: Vec<SubgoalStrategy>,
    #[arg(long, value_delimiter = ',', default_value = "geaps,random")]
    explores: Vec<ExploreStrategy>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory searched recursively for finished runs.
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = SkillTrainConfig {
        k: a.k,
        skill_horizon: a.horizon,
        iterations: a.iters,
        beta: a.beta,
        seed: a.seed,
        ..Default::default()
    };
    let skills = pretrain(a.suite_seed, &cfg, a.continuous)?;
    skills.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let r = train(&a.config, a.seed, &a.out).with_context(|| format!("running {}", a.config.display()))?;
    let last = r.final_record();
    eprintln!(
        "{} seed {}: {} steps, final success {:.3}, entropy {:.3}, wrote {}",
        r.label,
        r.seed,
        r.total_steps,
        last.map_or(0.0, |m| m.success_eval),
        last.map_or(0.0, |m| m.entropy_now),
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let skills = SkillSet::load(&a.skills)?;
    let maze = match &a.maze {
        Some(p) => parse_maze(&std::fs::read_to_string(p)?)?,
        None => MazeSpec::open(5, 5, Cell::new(2, 2))?.with_continuous(skills.continuous),
    };
    let (i, h, hc) = skill_quality(&skills, &maze)?;
    let out = serde_json::json!({
        "k": skills.k,
        "skill_horizon": skills.skill_horizon,
        "mutual_information": i,
        "entropy": h,
        "conditional_entropy": hc,
        "max_information": (skills.k as f64).ln(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<bool> {
    let report = run_oracle_suite(a.seed)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(p) = &a.out {
        std::fs::write(p, &text)?;
    }
    Ok(report.passed)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let base = ExperimentConfig::load(&a.config)?;
    let skills = if a.explores.contains(&ExploreStrategy::Geaps) {
        let Some(path) = &base.explore.skills else {
            bail!("geaps exploration needs `explore.skills` in the base config");
        };
        Some(SkillSet::load(path)?)
    } else {
        None
    };
    let cfgs = sweep_configs(&base, &a.subgoals, &a.explores, &a.seeds);
    let workers = a.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let results = sweep(&cfgs, skills.as_ref(), workers, &a.out)?;
    for (cfg, r) in cfgs.iter().zip(&results) {
        eprintln!(
            "{} seed {}: final success {:.3} -> {}",
            r.label,
            r.seed,
            r.final_record().map_or(0.0, |m| m.success_eval),
            run_dir(&a.out, cfg).display()
        );
    }
    Ok(())
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(RESULT_FILE).is_file() {
        out.push(dir.to_path_buf());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries.into_iter().filter(|p| p.is_dir()) {
        find_runs(&p, out)?;
    }
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let mut dirs = Vec::new();
    find_runs(&a.runs, &mut dirs)?;
    if dirs.is_empty() {
        bail!("no runs with {RESULT_FILE} under {}", a.runs.display());
    }
    let results = dirs.iter().map(|d| read_result(d)).collect::<geaps_core::Result<Vec<_>>>()?;
    write_plots(&a.out, &results)?;
    eprintln!("plotted {} runs into {}", results.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => cmd_pretrain(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Plot(a) => cmd_plot(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
