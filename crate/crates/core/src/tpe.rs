//! Tree-structured Parzen estimator over a box of named parameters.
//!
//! The first `n_startup` trials are uniform on the (scaled) box. After
//! that, completed trials are split at the `gamma` loss quantile into good
//! and bad sets, each dimension gets two truncated Gaussian mixtures `l`
//! and `g`, `n_candidates` draws are taken from `l`, and the one with the
//! largest `l/g` (product over dimensions) is evaluated next. Both
//! mixtures also carry a uniform component of weight `1/(k+1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;
use thiserror::Error;

pub type Theta = BTreeMap<String, f64>;

const MIN_BANDWIDTH: f64 = 1e-6;
const FLOOR_DIVISOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TpeError {
    #[error("parameter `{name}`: lower {lower} must be below upper {upper}")]
    EmptyInterval { name: String, lower: f64, upper: f64 },
    #[error("parameter `{0}`: log scale needs a positive lower bound")]
    LogNonPositive(String),
    #[error("parameter `{0}` is both free and frozen")]
    FrozenOverlap(String),
    #[error("parameter `{0}` declared twice")]
    Duplicate(String),
    #[error("trial budget must be at least 1")]
    NoBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub scale: Scale,
}

impl Dim {
    pub fn linear(name: &str, lower: f64, upper: f64) -> Self {
        Dim { name: name.into(), lower, upper, scale: Scale::Linear }
    }

    pub fn log(name: &str, lower: f64, upper: f64) -> Self {
        Dim { name: name.into(), lower, upper, scale: Scale::Log }
    }

    fn to_internal(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => v,
            Scale::Log => v.ln(),
        }
    }

    fn from_internal(&self, u: f64) -> f64 {
        let v = match self.scale {
            Scale::Linear => u,
            Scale::Log => u.exp(),
        };
        v.clamp(self.lower, self.upper)
    }

    fn internal_box(&self) -> (f64, f64) {
        (self.to_internal(self.lower), self.to_internal(self.upper))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dim>,
    pub frozen: Theta,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dim>, frozen: Theta) -> Result<Self, TpeError> {
        let s = SearchSpace { dims, frozen };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), TpeError> {
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.dims {
            if !(d.lower < d.upper) || !d.lower.is_finite() || !d.upper.is_finite() {
                return Err(TpeError::EmptyInterval {
                    name: d.name.clone(),
                    lower: d.lower,
                    upper: d.upper,
                });
            }
            if d.scale == Scale::Log && d.lower <= 0.0 {
                return Err(TpeError::LogNonPositive(d.name.clone()));
            }
            if self.frozen.contains_key(&d.name) {
                return Err(TpeError::FrozenOverlap(d.name.clone()));
            }
            if !seen.insert(d.name.as_str()) {
                return Err(TpeError::Duplicate(d.name.clone()));
            }
        }
        Ok(())
    }

    pub fn contains(&self, theta: &Theta) -> bool {
        self.dims
            .iter()
            .all(|d| theta.get(&d.name).is_some_and(|&v| d.lower <= v && v <= d.upper))
    }

    fn assemble(&self, internal: &[f64]) -> Theta {
        let mut theta = self.frozen.clone();
        for (d, &u) in self.dims.iter().zip(internal) {
            theta.insert(d.name.clone(), d.from_internal(u));
        }
        theta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub theta: Theta,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialLog {
    pub trials: Vec<Trial>,
    pub best: Option<usize>,
}

impl TrialLog {
    pub fn push(&mut self, theta: Theta, loss: f64) {
        self.trials.push(Trial { theta, loss });
        let i = self.trials.len() - 1;
        if self.best.map_or(true, |b| loss < self.trials[b].loss) {
            self.best = Some(i);
        }
    }

    pub fn best_trial(&self) -> Option<&Trial> {
        self.best.map(|b| &self.trials[b])
    }

    /// Best loss after each trial.
    pub fn running_min(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trials
            .iter()
            .map(|t| {
                best = best.min(t.loss);
                best
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeConfig {
    pub m: usize,
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    pub seed: u64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            m: 100,
            n_startup: 10,
            gamma: 0.25,
            n_candidates: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpeResult {
    pub theta: Theta,
    pub loss: f64,
    pub log: TrialLog,
}

/// Sizes of the good and bad sets for `k` completed trials.
pub fn split_sizes(k: usize, gamma: f64) -> (usize, usize) {
    if k < 2 {
        return (k, 0);
    }
    let good = ((gamma * k as f64).ceil() as usize).clamp(1, k - 1);
    (good, k - good)
}

/// One-dimensional Gaussian mixture truncated to `[lo, hi]`.
struct Parzen {
    centers: Vec<f64>,
    bandwidth: f64,
    lo: f64,
    hi: f64,
    // per-center truncation mass
    mass: Vec<f64>,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

impl Parzen {
    fn new(centers: Vec<f64>, lo: f64, hi: f64) -> Self {
        let k = centers.len().max(1) as f64;
        let spread = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - centers.iter().copied().fold(f64::INFINITY, f64::min);
        // Scott-style width from the set's own spread, floored so a tight
        // cluster of good trials cannot shrink the kernel to nothing
        let floor = (hi - lo) / (k + 1.0).min(FLOOR_DIVISOR);
        let bandwidth = (spread * 1.06 * k.powf(-0.2)).max(MIN_BANDWIDTH).max(floor);
        let n = std_normal();
        let mass = centers
            .iter()
            .map(|&c| (n.cdf((hi - c) / bandwidth) - n.cdf((lo - c) / bandwidth)).max(1e-300))
            .collect();
        Parzen { centers, bandwidth, lo, hi, mass }
    }

    /// Weight of the uniform component mixed into every estimator.
    fn prior_weight(&self) -> f64 {
        1.0 / (self.centers.len() as f64 + 1.0)
    }

    fn log_density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let terms: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.mass)
            .map(|(&c, &m)| {
                let z = (x - c) / h;
                -0.5 * z * z - m.ln()
            })
            .collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
        let mix = top + sum.ln() - (self.centers.len() as f64).ln() - h.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let w = self.prior_weight();
        ((1.0 - w) * mix.exp() + w / (self.hi - self.lo)).ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if rng.gen::<f64>() < self.prior_weight() {
            return self.lo + rng.gen::<f64>() * (self.hi - self.lo);
        }
        let c = self.centers[rng.gen_range(0..self.centers.len())];
        let h = self.bandwidth;
        let n = std_normal();
        let a = n.cdf((self.lo - c) / h);
        let b = n.cdf((self.hi - c) / h);
        let x = if b - a > 1e-12 {
            let u = a + rng.gen::<f64>() * (b - a);
            c + h * n.inverse_cdf(u.clamp(1e-16, 1.0 - 1e-16))
        } else {
            // the kernel sits far outside the box: fall back to uniform
            self.lo + rng.gen::<f64>() * (self.hi - self.lo)
        };
        if x.is_finite() {
            x.clamp(self.lo, self.hi)
        } else {
            c.clamp(self.lo, self.hi)
        }
    }
}

fn uniform_internal(space: &SearchSpace, rng: &mut ChaCha8Rng) -> Vec<f64> {
    space
        .dims
        .iter()
        .map(|d| {
            let (lo, hi) = d.internal_box();
            lo + rng.gen::<f64>() * (hi - lo)
        })
        .collect()
}

/// Proposes the next theta given the trials so far.
pub fn suggest(log: &TrialLog, space: &SearchSpace, config: &TpeConfig, rng: &mut ChaCha8Rng) -> Theta {
    let k = log.trials.len();
    if space.dims.is_empty() {
        return space.assemble(&[]);
    }
    if k < config.n_startup.max(2) {
        return space.assemble(&uniform_internal(space, rng));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| log.trials[a].loss.total_cmp(&log.trials[b].loss).then(a.cmp(&b)));
    let (n_good, _) = split_sizes(k, config.gamma);
    let (good, bad) = order.split_at(n_good);

    let models: Vec<(Parzen, Parzen)> = space
        .dims
        .iter()
        .map(|d| {
            let (lo, hi) = d.internal_box();
            let coords = |set: &[usize]| -> Vec<f64> {
                set.iter()
                    .map(|&i| {
                        let v = log.trials[i].theta.get(&d.name).copied().unwrap_or(d.lower);
                        d.to_internal(v.clamp(d.lower, d.upper)).clamp(lo, hi)
                    })
                    .collect()
            };
            (Parzen::new(coords(good), lo, hi), Parzen::new(coords(bad), lo, hi))
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..config.n_candidates.max(1) {
        let cand: Vec<f64> = models.iter().map(|(l, _)| l.sample(rng)).collect();
        let score: f64 = cand
            .iter()
            .zip(&models)
            .map(|(&x, (l, g))| l.log_density(x) - g.log_density(x))
            .sum();
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    space.assemble(&best.expect("at least one candidate").1)
}

/// Minimizes `objective` over `space` with a budget of `config.m` trials.
pub fn optimize<F>(mut objective: F, space: &SearchSpace, config: &TpeConfig) -> Result<TpeResult, TpeError>
where
    F: FnMut(&Theta) -> f64,
{
    space.validate()?;
    if config.m == 0 {
        return Err(TpeError::NoBudget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrialLog::default();
    let budget = if space.dims.is_empty() { 1 } else { config.m };
    for _ in 0..budget {
        let theta = suggest(&log, space, config, &mut rng);
        let loss = objective(&theta);
        log.push(theta, if loss.is_nan() { f64::INFINITY } else { loss });
    }
    let best = log.best_trial().expect("budget >= 1").clone();
    Ok(TpeResult {
        theta: best.theta,
        loss: best.loss,
        log,
    })
}

/// Uniform random search with the same budget and seeding, for comparison.
pub fn random_search<F>(mut objective: F, space: &SearchSpace, m: usize, seed: u64) -> Result<TpeResult, TpeError>
where
    F: FnMut(&Theta) -> f64,
{
    space.validate()?;
    if m == 0 {
        return Err(TpeError::NoBudget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrialLog::default();
    for _ in 0..m {
        let theta = space.assemble(&uniform_internal(space, &mut rng));
        let loss = objective(&theta);
        log.push(theta, loss);
    }
    let best = log.best_trial().expect("m >= 1").clone();
    Ok(TpeResult {
        theta: best.theta,
        loss: best.loss,
        log,
    })
}
