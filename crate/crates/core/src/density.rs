//! Achieved-goal density models and entropy estimates.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Goal, Point};
use crate::error::{invalid, Error, Result};

/// Probability floor applied before taking logarithms.
pub const EPS_P: f64 = 1e-12;

/// Default KDE bandwidth in normalized goal units.
pub const KDE_BANDWIDTH: f64 = 0.1;

/// Upper bound on buffered goals used for one KDE fit.
pub const KDE_MAX_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    bin_size: f64,
    counts: BTreeMap<(i64, i64), u64>,
    total: u64,
}

impl Histogram {
    /// A histogram over pre-counted bins; empty tables are rejected.
    pub fn from_counts(bin_size: f64, mut counts: BTreeMap<(i64, i64), u64>) -> Result<Self> {
        if !(bin_size > 0.0 && bin_size.is_finite()) {
            return Err(invalid(format!("bin size must be positive, got {bin_size}")));
        }
        counts.retain(|_, c| *c > 0);
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok(Self { bin_size, counts, total })
    }

    pub fn bin_of(&self, g: Goal) -> (i64, i64) {
        bin_of(g, self.bin_size)
    }

    pub fn bin_size(&self) -> f64 {
        self.bin_size
    }

    pub fn probability(&self, g: Goal) -> f64 {
        self.counts.get(&self.bin_of(g)).map_or(0.0, |c| *c as f64 / self.total as f64)
    }

    /// Occupied bins with their probabilities, in bin order.
    pub fn probabilities(&self) -> impl Iterator<Item = ((i64, i64), f64)> + '_ {
        let n = self.total as f64;
        self.counts.iter().map(move |(k, c)| (*k, *c as f64 / n))
    }

    pub fn counts(&self) -> &BTreeMap<(i64, i64), u64> {
        &self.counts
    }

    pub fn entropy(&self) -> f64 {
        self.probabilities().map(|(_, p)| -p * p.ln()).sum()
    }
}

/// Gaussian-kernel density estimate. Identical samples are merged into one
/// weighted kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    bandwidth: f64,
    points: Vec<Point>,
    weights: Vec<f64>,
    total: f64,
}

impl Kde {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn log_density(&self, g: Goal) -> f64 {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut best = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(self.points.len());
        for (p, w) in self.points.iter().zip(&self.weights) {
            let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
            let t = w.ln() - d2 * inv;
            best = best.max(t);
            terms.push(t);
        }
        let lse = best + terms.iter().map(|t| (t - best).exp()).sum::<f64>().ln();
        lse - self.total.ln() - (2.0 * PI * self.bandwidth * self.bandwidth).ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DensityModel {
    Histogram(Histogram),
    Kde(Kde),
}

impl DensityModel {
    /// Log density (KDE) or log bin probability (histogram), floored at
    /// `ln EPS_P` for histograms.
    pub fn log_density(&self, g: Goal) -> f64 {
        match self {
            DensityModel::Histogram(h) => h.probability(g).max(EPS_P).ln(),
            DensityModel::Kde(k) => k.log_density(g),
        }
    }

    pub fn density(&self, g: Goal) -> f64 {
        self.log_density(g).exp()
    }

    pub fn sample_count(&self) -> usize {
        match self {
            DensityModel::Histogram(h) => h.total as usize,
            DensityModel::Kde(k) => k.total as usize,
        }
    }
}

fn bin_of(g: Goal, bin_size: f64) -> (i64, i64) {
    ((g.x / bin_size).floor() as i64, (g.y / bin_size).floor() as i64)
}

pub fn fit_histogram(goals: &[Goal], bin_size: f64) -> Result<DensityModel> {
    if goals.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if !(bin_size > 0.0 && bin_size.is_finite()) {
        return Err(invalid(format!("bin size must be positive, got {bin_size}")));
    }
    let mut counts = BTreeMap::new();
    for g in goals {
        *counts.entry(bin_of(*g, bin_size)).or_insert(0u64) += 1;
    }
    Ok(DensityModel::Histogram(Histogram {
        bin_size,
        counts,
        total: goals.len() as u64,
    }))
}

pub fn fit_kde(goals: &[Goal], bandwidth: f64) -> Result<DensityModel> {
    if goals.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let mut merged: BTreeMap<(u64, u64), (Point, f64)> = BTreeMap::new();
    for g in goals {
        merged.entry(g.key()).or_insert((*g, 0.0)).1 += 1.0;
    }
    let (points, weights) = merged.into_values().unzip();
    Ok(DensityModel::Kde(Kde {
        bandwidth,
        points,
        weights,
        total: goals.len() as f64,
    }))
}

/// Entropy estimate in nats: the bin entropy for histograms, the resubstitution
/// estimate `-mean ln p(g)` over `eval_goals` for KDEs.
pub fn empirical_entropy(model: &DensityModel, eval_goals: &[Goal]) -> Result<f64> {
    if eval_goals.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    Ok(match model {
        DensityModel::Histogram(h) => h.entropy(),
        DensityModel::Kde(k) => -eval_goals.iter().map(|g| k.log_density(*g)).sum::<f64>() / eval_goals.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkewedWeights {
    pub weights: Vec<f64>,
    pub exponent: f64,
}

/// Self-normalized `p(g)^exponent` over the buffer, computed in log space.
pub fn skew_weights(model: &DensityModel, buffer_goals: &[Goal], exponent: f64) -> Result<SkewedWeights> {
    if buffer_goals.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let logs: Vec<f64> = buffer_goals.iter().map(|g| exponent * model.log_density(*g)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);
    Ok(SkewedWeights { weights, exponent })
}

/// Per-dimension min-max scaling onto `[0, 1]`. A degenerate dimension is
/// only shifted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalNormalizer {
    min: Point,
    scale: Point,
}

impl GoalNormalizer {
    pub fn fit(goals: &[Goal]) -> Result<Self> {
        let first = *goals.first().ok_or(Error::EmptyBuffer)?;
        let (mut lo, mut hi) = (first, first);
        for g in goals {
            lo = Point::new(lo.x.min(g.x), lo.y.min(g.y));
            hi = Point::new(hi.x.max(g.x), hi.y.max(g.y));
        }
        let span = |a: f64, b: f64| if b > a { 1.0 / (b - a) } else { 1.0 };
        Ok(Self {
            min: lo,
            scale: Point::new(span(lo.x, hi.x), span(lo.y, hi.y)),
        })
    }

    pub fn apply(&self, g: Goal) -> Goal {
        Point::new((g.x - self.min.x) * self.scale.x, (g.y - self.min.y) * self.scale.y)
    }
}

/// Uniform subsample without replacement; the input order is kept.
pub fn subsample<R: Rng + ?Sized>(goals: &[Goal], max: usize, rng: &mut R) -> Vec<Goal> {
    if goals.len() <= max {
        return goals.to_vec();
    }
    let mut idx = index::sample(rng, goals.len(), max).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| goals[i]).collect()
}

/// KDE over min-max normalized goals, queried in raw goal coordinates.
#[derive(Clone, Debug)]
pub struct NormalizedKde {
    pub normalizer: GoalNormalizer,
    pub model: DensityModel,
}

impl NormalizedKde {
    pub fn fit<R: Rng + ?Sized>(goals: &[Goal], bandwidth: f64, rng: &mut R) -> Result<Self> {
        let sample = subsample(goals, KDE_MAX_SAMPLES, rng);
        let normalizer = GoalNormalizer::fit(&sample)?;
        let normalized: Vec<Goal> = sample.iter().map(|g| normalizer.apply(*g)).collect();
        Ok(Self {
            normalizer,
            model: fit_kde(&normalized, bandwidth)?,
        })
    }

    pub fn log_density(&self, g: Goal) -> f64 {
        self.model.log_density(self.normalizer.apply(g))
    }
}
