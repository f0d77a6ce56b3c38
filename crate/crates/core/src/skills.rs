//! Skill pre-training: Monte Carlo posteriors over binned goal
//! transitions, the information and entropy pseudo-rewards, and
//! policy-gradient training of a tabular multi-skill softmax policy.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentObs, Cell, EnvState, GaMdpSpec, MazeSpec, Point};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};

/// Floor inside the entropy reward's logarithm.
pub const EPS_R: f64 = 1e-6;

pub const ARTIFACT_FORMAT: &str = "geaps-skillset";
pub const ARTIFACT_VERSION: u32 = 1;

/// A goal displacement bin, `floor(Δg / bin_size)` per axis.
pub type DeltaBin = (i64, i64);

pub fn delta_bin(delta: Point, bin_size: f64) -> DeltaBin {
    ((delta.x / bin_size).floor() as i64, (delta.y / bin_size).floor() as i64)
}

/// Additively smoothed joint counts over (skill, ΔG bin). The last column
/// is a catch-all for bins never observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTables {
    k: usize,
    bins: Vec<DeltaBin>,
    /// `k × (bins.len() + 1)` smoothed counts, row-major by skill.
    counts: Vec<f64>,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
    total: f64,
}

impl PosteriorTables {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Observed bins, excluding the catch-all.
    pub fn bins(&self) -> &[DeltaBin] {
        &self.bins
    }

    /// Columns including the catch-all.
    pub fn columns(&self) -> usize {
        self.bins.len() + 1
    }

    /// Column of a bin; unseen bins map to the catch-all.
    pub fn column(&self, b: DeltaBin) -> usize {
        self.bins.binary_search(&b).unwrap_or(self.bins.len())
    }

    pub fn count(&self, z: usize, col: usize) -> f64 {
        self.counts[z * self.columns() + col]
    }

    /// `q(z | Δg)`.
    pub fn q_z_given_g(&self, z: usize, col: usize) -> f64 {
        self.count(z, col) / self.col_sums[col]
    }

    /// `q(Δg | z)`.
    pub fn q_g_given_z(&self, col: usize, z: usize) -> f64 {
        self.count(z, col) / self.row_sums[z]
    }

    pub fn q_z(&self, z: usize) -> f64 {
        self.row_sums[z] / self.total
    }

    pub fn q_g(&self, col: usize) -> f64 {
        self.col_sums[col] / self.total
    }

    /// `max_g q(g | z)`.
    pub fn max_q_g_given_z(&self, z: usize) -> f64 {
        let c = self.columns();
        self.counts[z * c..(z + 1) * c].iter().copied().fold(0.0, f64::max) / self.row_sums[z]
    }

    /// Normalized smoothed joint, row-major by skill.
    pub fn joint(&self) -> Vec<f64> {
        self.counts.iter().map(|n| n / self.total).collect()
    }
}

/// Posterior tables from `(z, bin)` outcomes with additive smoothing `λ`.
pub fn estimate_posteriors(rollouts: &[(usize, DeltaBin)], k: usize, smoothing: f64) -> Result<PosteriorTables> {
    if rollouts.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(invalid(format!("smoothing must be positive, got {smoothing}")));
    }
    if let Some((z, _)) = rollouts.iter().find(|(z, _)| *z >= k) {
        return Err(invalid(format!("skill {z} out of range for {k} skills")));
    }
    let mut raw: BTreeMap<DeltaBin, Vec<u64>> = BTreeMap::new();
    for (z, b) in rollouts {
        raw.entry(*b).or_insert_with(|| vec![0; k])[*z] += 1;
    }
    let bins: Vec<DeltaBin> = raw.keys().copied().collect();
    let cols = bins.len() + 1;
    let mut counts = vec![smoothing; k * cols];
    for (j, per_z) in raw.values().enumerate() {
        for (z, n) in per_z.iter().enumerate() {
            counts[z * cols + j] += *n as f64;
        }
    }
    let row_sums: Vec<f64> = (0..k).map(|z| counts[z * cols..(z + 1) * cols].iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols).map(|j| (0..k).map(|z| counts[z * cols + j]).sum()).collect();
    let total = row_sums.iter().sum();
    Ok(PosteriorTables {
        k,
        bins,
        counts,
        row_sums,
        col_sums,
        total,
    })
}

/// Information reward at the bin of `s_t` plus `β` times the entropy reward
/// at the bin of `s_{t+1}`.
pub fn pseudo_reward(tables: &PosteriorTables, z: usize, delta_now: DeltaBin, delta_next: DeltaBin, beta: f64, prior: &[f64]) -> f64 {
    let mi = tables.q_z_given_g(z, tables.column(delta_now)).ln() - prior[z].ln();
    if beta == 0.0 {
        return mi;
    }
    let gap = tables.max_q_g_given_z(z) - tables.q_g_given_z(tables.column(delta_next), z);
    mi + beta * (gap + EPS_R).ln()
}

/// `(I(Z;ΔG), H(ΔG), H(ΔG|Z))` in nats of a joint given row-major by skill.
pub fn joint_information(joint: &[f64], k: usize) -> (f64, f64, f64) {
    let cols = joint.len() / k;
    let pz: Vec<f64> = (0..k).map(|z| joint[z * cols..(z + 1) * cols].iter().sum()).collect();
    let pg: Vec<f64> = (0..cols).map(|j| (0..k).map(|z| joint[z * cols + j]).sum()).collect();
    let h_g: f64 = pg.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    let mut h_gz = 0.0;
    let mut i = 0.0;
    for z in 0..k {
        for j in 0..cols {
            let p = joint[z * cols + j];
            if p > 0.0 {
                h_gz -= p * (p / pz[z]).ln();
                i += p * (p / (pz[z] * pg[j])).ln();
            }
        }
    }
    (i, h_g, h_gz)
}

/// Exact information quantities of the smoothed joint.
pub fn mutual_information(tables: &PosteriorTables) -> (f64, f64, f64) {
    joint_information(&tables.joint(), tables.k)
}

/// `K` latent skills sharing a per-observation softmax policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillSet {
    pub k: usize,
    pub prior: Vec<f64>,
    pub skill_horizon: usize,
    pub delta_bin_size: f64,
    pub continuous: bool,
    pub n_actions: usize,
    pub n_keys: usize,
    /// `(key · K + z) · n_actions + a`.
    pub logits: Vec<f64>,
    pub tables: Option<PosteriorTables>,
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    format: String,
    version: u32,
    skills: SkillSet,
}

impl SkillSet {
    /// Untrained skills: uniform action distributions.
    pub fn uniform(k: usize, skill_horizon: usize, continuous: bool) -> Result<Self> {
        if k < 1 {
            return Err(invalid("at least one skill is required"));
        }
        if skill_horizon < 1 {
            return Err(invalid("skill horizon must be at least 1"));
        }
        let n_actions = if continuous { 8 } else { 4 };
        let n_keys = AgentObs::key_count(continuous);
        Ok(Self {
            k,
            prior: vec![1.0 / k as f64; k],
            skill_horizon,
            delta_bin_size: if continuous { 0.2 } else { 1.0 },
            continuous,
            n_actions,
            n_keys,
            logits: vec![0.0; n_keys * k * n_actions],
            tables: None,
        })
    }

    fn row(&self, key: usize, z: usize) -> std::ops::Range<usize> {
        let o = (key * self.k + z) * self.n_actions;
        o..o + self.n_actions
    }

    /// `π_Z(· | obs, z)`.
    pub fn probs(&self, obs: &AgentObs, z: usize) -> Vec<f64> {
        softmax(&self.logits[self.row(obs.key(), z)])
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &AgentObs, z: usize, rng: &mut R) -> usize {
        sample_categorical(&self.probs(obs, z), rng)
    }

    pub fn sample_skill<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.prior, rng)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Artifact {
            format: ARTIFACT_FORMAT.into(),
            version: ARTIFACT_VERSION,
            skills: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Artifact = serde_json::from_str(text)?;
        if a.format != ARTIFACT_FORMAT {
            return Err(Error::Artifact(format!("unexpected format `{}`", a.format)));
        }
        if a.version != ARTIFACT_VERSION {
            return Err(Error::Artifact(format!("unsupported version {}", a.version)));
        }
        let s = a.skills;
        let expected = s.n_keys * s.k * s.n_actions;
        if s.logits.len() != expected || s.prior.len() != s.k || s.k == 0 || s.skill_horizon == 0 {
            return Err(Error::Artifact("inconsistent skill table dimensions".into()));
        }
        if s.n_actions != if s.continuous { 8 } else { 4 } || s.n_keys != AgentObs::key_count(s.continuous) {
            return Err(Error::Artifact("action or observation count does not match the maze kind".into()));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let mut u = rng.gen::<f64>();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillTrainConfig {
    pub k: usize,
    pub skill_horizon: usize,
    pub iterations: usize,
    pub beta: f64,
    pub seed: u64,
    /// Episodes rolled out per iteration.
    pub batch_episodes: usize,
    pub step_size: f64,
    pub smoothing: f64,
    /// Most recent episodes feeding the posterior tables.
    pub window: usize,
}

impl Default for SkillTrainConfig {
    fn default() -> Self {
        Self {
            k: 4,
            skill_horizon: 2,
            iterations: 300,
            beta: 0.1,
            seed: 0,
            batch_episodes: 128,
            step_size: 0.05,
            smoothing: 0.1,
            window: 5_000,
        }
    }
}

struct Episode {
    z: usize,
    keys: Vec<usize>,
    actions: Vec<usize>,
    /// Bins of `s_0 .. s_{T^s}` relative to `s_0`.
    bins: Vec<DeltaBin>,
}

/// Central cell of a maze.
pub fn central_cell(maze: &MazeSpec) -> Cell {
    Cell::new((maze.width() / 2) as i32, (maze.height() / 2) as i32)
}

fn start_state<R: Rng + ?Sized>(spec: &GaMdpSpec, rng: &mut R) -> EnvState {
    let c = central_cell(spec.maze());
    if spec.is_continuous() {
        EnvState {
            pos: Point::new(c.x as f64 + rng.gen::<f64>(), c.y as f64 + rng.gen::<f64>()),
            step_index: 0,
        }
    } else {
        spec.state_at(c)
    }
}

fn rollout<R: Rng + ?Sized>(skills: &SkillSet, spec: &GaMdpSpec, rng: &mut R) -> Result<Episode> {
    let z = skills.sample_skill(rng);
    let mut s = start_state(spec, rng);
    let origin = s.pos;
    let mut ep = Episode {
        z,
        keys: Vec::with_capacity(skills.skill_horizon),
        actions: Vec::with_capacity(skills.skill_horizon),
        bins: vec![delta_bin(Point::default(), skills.delta_bin_size)],
    };
    for _ in 0..skills.skill_horizon {
        let obs = spec.agent_obs(&s);
        let a = skills.sample_action(&obs, z, rng);
        s = spec.step_index(&s, a)?;
        ep.keys.push(obs.key());
        ep.actions.push(a);
        ep.bins.push(delta_bin(s.pos.sub(origin), skills.delta_bin_size));
    }
    Ok(ep)
}

/// Trains skills and reports every refreshed posterior table to `observer`.
///
/// Each iteration rolls out a batch from the central cell of uniformly drawn
/// suite mazes, refreshes the posterior tables from the recent window
/// (every per-step displacement of an episode counts as one outcome), then
/// takes one REINFORCE step on the summed batch gradient with reward-to-go
/// and a per-step mean baseline.
pub fn train_skills_with<F>(suite: &[MazeSpec], cfg: &SkillTrainConfig, mut observer: F) -> Result<SkillSet>
where
    F: FnMut(&PosteriorTables),
{
    if suite.is_empty() {
        return Err(invalid("pre-training suite is empty"));
    }
    if cfg.k < 2 {
        return Err(invalid("at least two skills are required"));
    }
    if cfg.iterations < 1 || cfg.batch_episodes < 1 || cfg.window < 1 {
        return Err(invalid("iterations, batch size and window must be positive"));
    }
    if !(cfg.beta >= 0.0) {
        return Err(invalid(format!("beta must be non-negative, got {}", cfg.beta)));
    }
    let continuous = suite[0].is_continuous();
    if suite.iter().any(|m| m.is_continuous() != continuous) {
        return Err(invalid("suite mixes discrete and continuous mazes"));
    }
    let specs: Vec<GaMdpSpec> = suite
        .iter()
        .map(|m| GaMdpSpec::new(m.clone(), cfg.skill_horizon.max(1), 1.0))
        .collect::<Result<_>>()?;
    let mut skills = SkillSet::uniform(cfg.k, cfg.skill_horizon, continuous)?;
    let mut rng = rng::stream(cfg.seed, Stream::Skills);
    let mut window: VecDeque<Vec<(usize, DeltaBin)>> = VecDeque::new();
    let ts = cfg.skill_horizon;

    for _ in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_episodes);
        for _ in 0..cfg.batch_episodes {
            let spec = &specs[rng.gen_range(0..specs.len())];
            let ep = rollout(&skills, spec, &mut rng)?;
            window.push_back(ep.bins[1..].iter().map(|b| (ep.z, *b)).collect());
            if window.len() > cfg.window {
                window.pop_front();
            }
            batch.push(ep);
        }

        let outcomes: Vec<(usize, DeltaBin)> = window.iter().flatten().copied().collect();
        let tables = estimate_posteriors(&outcomes, cfg.k, cfg.smoothing)?;
        observer(&tables);

        let returns: Vec<Vec<f64>> = batch
            .iter()
            .map(|ep| {
                let r: Vec<f64> = (0..ts)
                    .map(|t| pseudo_reward(&tables, ep.z, ep.bins[t], ep.bins[t + 1], cfg.beta, &skills.prior))
                    .collect();
                let mut g = vec![0.0; ts];
                let mut acc = 0.0;
                for t in (0..ts).rev() {
                    acc += r[t];
                    g[t] = acc;
                }
                g
            })
            .collect();
        let baseline: Vec<f64> = (0..ts)
            .map(|t| returns.iter().map(|g| g[t]).sum::<f64>() / returns.len() as f64)
            .collect();

        let mut grad = vec![0.0; skills.logits.len()];
        for (ep, g) in batch.iter().zip(&returns) {
            for t in 0..ts {
                let adv = g[t] - baseline[t];
                let range = skills.row(ep.keys[t], ep.z);
                let pi = softmax(&skills.logits[range.clone()]);
                for (a, idx) in range.enumerate() {
                    let indicator = if a == ep.actions[t] { 1.0 } else { 0.0 };
                    grad[idx] += adv * (indicator - pi[a]);
                }
            }
        }
        for (l, d) in skills.logits.iter_mut().zip(&grad) {
            *l += cfg.step_size * d;
        }
        skills.tables = Some(tables);
    }
    Ok(skills)
}

pub fn train_skills(suite: &[MazeSpec], cfg: &SkillTrainConfig) -> Result<SkillSet> {
    train_skills_with(suite, cfg, |_| {})
}

/// Exact joint `p(z, Δg bin of s_{T^s})` from a fixed start, enumerating all
/// `|A|^{T^s}` action sequences per skill. Rows follow skills, columns the
/// returned bins.
pub fn exact_skill_joint(skills: &SkillSet, spec: &GaMdpSpec, start: EnvState) -> Result<(Vec<DeltaBin>, Vec<f64>)> {
    let seqs = (skills.n_actions as u128).pow(skills.skill_horizon as u32);
    if seqs > 10_000_000 {
        return Err(Error::EnumerationTooLarge { count: seqs, limit: 10_000_000 });
    }
    let mut mass: BTreeMap<DeltaBin, Vec<f64>> = BTreeMap::new();
    for z in 0..skills.k {
        let mut stack = vec![(start, skills.prior[z], 0usize)];
        while let Some((s, p, depth)) = stack.pop() {
            if depth == skills.skill_horizon {
                let b = delta_bin(s.pos.sub(start.pos), skills.delta_bin_size);
                mass.entry(b).or_insert_with(|| vec![0.0; skills.k])[z] += p;
                continue;
            }
            let probs = skills.probs(&spec.agent_obs(&s), z);
            for (a, pa) in probs.iter().enumerate() {
                if *pa > 0.0 {
                    stack.push((spec.step_index(&s, a)?, p * pa, depth + 1));
                }
            }
        }
    }
    let bins: Vec<DeltaBin> = mass.keys().copied().collect();
    let cols = bins.len();
    let mut joint = vec![0.0; skills.k * cols];
    for (j, per_z) in mass.values().enumerate() {
        for (z, p) in per_z.iter().enumerate() {
            joint[z * cols + j] = *p;
        }
    }
    Ok((bins, joint))
}

/// `(I, H(ΔG), H(ΔG|Z))` of the exact final-displacement joint from the
/// central cell of `maze`.
pub fn skill_quality(skills: &SkillSet, maze: &MazeSpec) -> Result<(f64, f64, f64)> {
    let spec = GaMdpSpec::new(maze.clone(), skills.skill_horizon, 1.0)?;
    let start = spec.state_at(central_cell(maze));
    let start = if spec.is_continuous() {
        EnvState { pos: central_cell(maze).center(), ..start }
    } else {
        start
    };
    let (_, joint) = exact_skill_joint(skills, &spec, start)?;
    Ok(joint_information(&joint, skills.k))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::rng::Rng as ChaCha;

    fn empty5() -> MazeSpec {
        MazeSpec::open(5, 5, Cell::new(2, 2)).unwrap()
    }

    /// Textbook double-sum `Σ p(z,g) ln p(z,g)/(p(z)p(g))`, written
    /// independently of `joint_information`.
    fn brute_mi(joint: &[Vec<f64>]) -> f64 {
        let total: f64 = joint.iter().flatten().sum();
        let mut mi = 0.0;
        for (z, row) in joint.iter().enumerate() {
            for (g, v) in row.iter().enumerate() {
                let p = v / total;
                if p == 0.0 {
                    continue;
                }
                let pz: f64 = joint[z].iter().sum::<f64>() / total;
                let pg: f64 = joint.iter().map(|r| r[g]).sum::<f64>() / total;
                mi += p * (p / (pz * pg)).ln();
            }
        }
        mi
    }

    #[test]
    fn separable_skills() {
        let mut rollouts = vec![(0, (1, 0)); 500];
        rollouts.extend(vec![(1, (0, 1)); 500]);
        let t = estimate_posteriors(&rollouts, 2, 1e-9).unwrap();
        let a = t.column((1, 0));
        assert!((t.q_z_given_g(0, a) - 1.0).abs() < 1e-9);
        assert!(t.q_z_given_g(1, a) < 1e-9);
        assert!(estimate_posteriors(&[], 2, 0.1).is_err());
        assert!(estimate_posteriors(&rollouts, 2, 0.0).is_err());
        assert!(estimate_posteriors(&[(5, (0, 0))], 2, 0.1).is_err());
    }

    #[test]
    fn uninformative_outcomes() {
        let rollouts: Vec<(usize, DeltaBin)> = (0..400).map(|i| (i % 4, ((i / 4 % 3) as i64, 0))).collect();
        let t = estimate_posteriors(&rollouts, 4, 0.1).unwrap();
        for col in 0..t.columns() {
            for z in 0..4 {
                assert!((t.q_z_given_g(z, col) - 0.25).abs() < 1e-12);
            }
        }
        let (i, _, _) = mutual_information(&t);
        assert!(i.abs() < 1e-12);
    }

    #[test]
    fn unseen_bins_use_catch_all() {
        let t = estimate_posteriors(&[(0, (0, 0)), (1, (1, 1))], 2, 0.1).unwrap();
        assert_eq!(t.columns(), 3);
        assert_eq!(t.column((9, 9)), 2);
        assert!((t.q_z_given_g(0, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        // q(z|g) = 1 with uniform prior over 4 skills: r = ln 4.
        let rollouts: Vec<(usize, DeltaBin)> = (0..4).flat_map(|z| vec![(z, (z as i64, 0)); 10]).collect();
        let t = estimate_posteriors(&rollouts, 4, 1e-15).unwrap();
        let prior = vec![0.25; 4];
        let r = pseudo_reward(&t, 2, (2, 0), (2, 0), 0.0, &prior);
        assert!((r - 4f64.ln()).abs() < 1e-9);
        assert!((r - 1.3863).abs() < 1e-4);
        // Next bin is the argmax of q(.|z): the floor is engaged.
        let with_entropy = pseudo_reward(&t, 2, (2, 0), (2, 0), 1.0, &prior);
        assert!((with_entropy - r - EPS_R.ln()).abs() < 1e-6);
        // Uninformative posterior: only the entropy term remains.
        let flat: Vec<(usize, DeltaBin)> = (0..4).map(|z| (z, (0, 0))).collect();
        let u = estimate_posteriors(&flat, 4, 0.1).unwrap();
        let beta = 0.3;
        let gap = u.max_q_g_given_z(1) - u.q_g_given_z(u.column((0, 0)), 1);
        let got = pseudo_reward(&u, 1, (0, 0), (0, 0), beta, &prior);
        assert!((got - beta * (gap + EPS_R).ln()).abs() < 1e-12);
    }

    #[test]
    fn information_cases() {
        let independent: Vec<f64> = (0..4).flat_map(|_| [0.1, 0.05, 0.1]).collect();
        let (i, _, _) = joint_information(&independent, 4);
        assert!(i.abs() < 1e-12);
        let mut diag = vec![0.0; 16];
        for z in 0..4 {
            diag[z * 4 + z] = 0.25;
        }
        let (i, h, hc) = joint_information(&diag, 4);
        assert!((i - 4f64.ln()).abs() < 1e-12 && hc.abs() < 1e-12 && (h - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn information_matches_brute_force() {
        let mut rng = ChaCha::seed_from_u64(9);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.gen::<f64>()).collect()).collect();
            let total: f64 = rows.iter().flatten().sum();
            let flat: Vec<f64> = rows.iter().flatten().map(|v| v / total).collect();
            let (i, h, hc) = joint_information(&flat, 4);
            assert!((i - brute_mi(&rows)).abs() < 1e-9);
            assert!((h - i - hc).abs() < 1e-9);
        }
    }

    #[test]
    fn skill_set_artifact_round_trip() {
        let mut s = SkillSet::uniform(3, 2, false).unwrap();
        s.logits[5] = 1.25;
        let text = s.to_json().unwrap();
        assert!(text.contains("\"format\": \"geaps-skillset\""));
        assert_eq!(SkillSet::from_json(&text).unwrap(), s);
        let bumped = text.replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(SkillSet::from_json(&bumped), Err(Error::Artifact(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skills.json");
        s.save(&path).unwrap();
        assert_eq!(SkillSet::load(&path).unwrap(), s);
    }

    #[test]
    fn untrained_skills_have_no_information() {
        let s = SkillSet::uniform(4, 2, false).unwrap();
        let (i, h, _) = skill_quality(&s, &empty5()).unwrap();
        assert!(i.abs() < 1e-12);
        assert!(h > 0.0);
    }

    #[test]
    fn exact_joint_sums_to_one() {
        let mut s = SkillSet::uniform(4, 3, false).unwrap();
        let mut rng = ChaCha::seed_from_u64(1);
        s.logits.iter_mut().for_each(|l| *l = rng.gen_range(-2.0..2.0));
        let spec = GaMdpSpec::new(empty5(), 3, 1.0).unwrap();
        let (_, joint) = exact_skill_joint(&s, &spec, spec.state_at(Cell::new(2, 2))).unwrap();
        assert!((joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let cfg = SkillTrainConfig { iterations: 60, seed: 3, ..Default::default() };
        let suite = [empty5()];
        let a = train_skills(&suite, &cfg).unwrap();
        let b = train_skills(&suite, &cfg).unwrap();
        assert_eq!(a, b);
        let (i, _, _) = skill_quality(&a, &suite[0]).unwrap();
        assert!(i > 0.05, "{i}");
    }

    #[test]
    fn training_validates_inputs() {
        let cfg = SkillTrainConfig::default();
        assert!(train_skills(&[], &cfg).is_err());
        assert!(train_skills(&[empty5()], &SkillTrainConfig { k: 1, ..cfg.clone() }).is_err());
        assert!(train_skills(&[empty5()], &SkillTrainConfig { iterations: 0, ..cfg.clone() }).is_err());
        let mixed = [empty5(), empty5().with_continuous(true)];
        assert!(train_skills(&mixed, &cfg).is_err());
    }

    #[test]
    fn continuous_training_runs() {
        let suite = [empty5().with_continuous(true)];
        let cfg = SkillTrainConfig { iterations: 5, batch_episodes: 16, ..Default::default() };
        let s = train_skills(&suite, &cfg).unwrap();
        assert_eq!(s.n_actions, 8);
        let (i, h, hc) = skill_quality(&s, &suite[0]).unwrap();
        assert!((h - i - hc).abs() < 1e-9);
    }

    fn counts_strategy() -> impl Strategy<Value = (usize, Vec<(usize, DeltaBin)>)> {
        (2usize..6).prop_flat_map(|k| {
            (Just(k), prop::collection::vec((0..k, (-2i64..3, -2i64..3)), 1..200))
        })
    }

    proptest! {
        #[test]
        fn tables_normalize_and_obey_bayes((k, rollouts) in counts_strategy(), lambda in 0.01f64..2.0) {
            let t = estimate_posteriors(&rollouts, k, lambda).unwrap();
            for col in 0..t.columns() {
                let s: f64 = (0..k).map(|z| t.q_z_given_g(z, col)).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            for z in 0..k {
                let s: f64 = (0..t.columns()).map(|c| t.q_g_given_z(c, z)).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                for c in 0..t.columns() {
                    let lhs = t.q_z_given_g(z, c) * t.q_g(c);
                    let rhs = t.q_g_given_z(c, z) * t.q_z(z);
                    prop_assert!((lhs - rhs).abs() < 1e-9);
                }
            }
            let (i, h, hc) = mutual_information(&t);
            prop_assert!((i + hc - h).abs() < 1e-9);
            prop_assert!(i >= -1e-12);
            prop_assert!(i <= (k as f64).ln().min((t.columns() as f64).ln()) + 1e-12);
        }

        #[test]
        fn mi_reward_is_log_k_when_certain(k in 2usize..8, z in 0usize..8) {
            let z = z % k;
            let rollouts: Vec<(usize, DeltaBin)> = (0..k).map(|s| (s, (s as i64, 0))).collect();
            let t = estimate_posteriors(&rollouts, k, 1e-300).unwrap();
            let prior = vec![1.0 / k as f64; k];
            let r = pseudo_reward(&t, z, (z as i64, 0), (z as i64, 0), 0.0, &prior);
            prop_assert!((r - (k as f64).ln()).abs() < 1e-12);
        }

        #[test]
        fn policy_rows_are_distributions(seed in 0u64..1000) {
            let cfg = SkillTrainConfig { iterations: 3, batch_episodes: 32, seed, step_size: 0.5, ..Default::default() };
            let s = train_skills(&[empty5()], &cfg).unwrap();
            for key in 0..s.n_keys {
                for z in 0..s.k {
                    let p = s.probs(&AgentObs::Walls(key as u8), z);
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert!(p.iter().all(|x| *x >= 0.0));
                }
            }
        }
    }
}
