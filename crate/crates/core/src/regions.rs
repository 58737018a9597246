//! Hard-region mining.
//!
//! Residuals `r = y - sigma(z_base)` are computed on the training split, a
//! shallow CART is fitted to `|r|`, and each leaf is scored by
//!
//! ```text
//! C = lambda * (leaf sum|r| / total sum|r|) + (1 - lambda) * (leaf rows / n)
//! ```
//!
//! Leaves with `C >= c_min` (and non-negligible mean error) become regions,
//! highest priority first, capped at `k_max`. A region's rule is the
//! intersection of the bounds along its root-to-leaf path, so regions cut
//! from one tree never overlap.

use crate::dataset::Dataset;
use crate::legacy::{FrozenModel, LegacyError};
use crate::metrics::sigmoid;
use crate::tree::{RegressionTree, TreeParams};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("CART needs at least {needed} rows (2 x min_leaf), got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("{rows} rows but {residuals} residuals")]
    Length { rows: usize, residuals: usize },
    #[error(transparent)]
    Legacy(#[from] LegacyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub lambda: f64,
    pub c_min: f64,
    pub k_max: usize,
    /// Leaves whose mean |r| does not exceed this are never hard regions.
    pub min_mean_residual: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            max_depth: 3,
            min_leaf: 30,
            lambda: 0.7,
            c_min: 0.15,
            k_max: 5,
            min_mean_residual: 1e-3,
        }
    }
}

/// Probability-scale residuals, aligned with the dataset's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector(pub Vec<f64>);

impl ResidualVector {
    pub fn abs(&self) -> Vec<f64> {
        self.0.iter().map(|r| r.abs()).collect()
    }
}

pub fn residuals(frozen: &FrozenModel, data: &Dataset) -> Result<ResidualVector, RegionError> {
    let logits = frozen.dataset_logits(data)?;
    Ok(residuals_from_logits(&data.target, &logits))
}

pub fn residuals_from_logits(target: &[u8], logits: &[f64]) -> ResidualVector {
    ResidualVector(
        target
            .iter()
            .zip(logits)
            .map(|(&y, &z)| y as f64 - sigmoid(z))
            .collect(),
    )
}

/// CART fitted to absolute residuals. Leaf `count` and `sum` carry sample
/// coverage and cumulative |r|.
#[derive(Debug, Clone, PartialEq)]
pub struct CartTree {
    pub tree: RegressionTree,
    pub feature_names: Arc<[String]>,
    pub n_rows: usize,
    pub total_abs_residual: f64,
}

pub fn fit_cart(data: &Dataset, abs_residuals: &[f64], config: &RegionConfig) -> Result<CartTree, RegionError> {
    let n = data.n_rows();
    if abs_residuals.len() != n {
        return Err(RegionError::Length {
            rows: n,
            residuals: abs_residuals.len(),
        });
    }
    let needed = 2 * config.min_leaf.max(1);
    if n < needed {
        return Err(RegionError::TooFewRows { needed, got: n });
    }
    let rows: Vec<usize> = (0..n).collect();
    let tree = RegressionTree::fit(
        &data.x,
        abs_residuals,
        &rows,
        TreeParams {
            max_depth: config.max_depth,
            min_leaf: config.min_leaf,
            features: None,
        },
    );
    Ok(CartTree {
        tree,
        feature_names: Arc::clone(&data.feature_names),
        n_rows: n,
        total_abs_residual: abs_residuals.iter().sum(),
    })
}

/// One interval constraint `lower < x[index] <= upper`; `None` is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub feature: String,
    pub index: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Clause {
    #[inline]
    pub fn admits(&self, v: f64) -> bool {
        self.lower.map_or(true, |l| v > l) && self.upper.map_or(true, |u| v <= u)
    }
}

/// Which bound of an interval clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub clauses: Vec<Clause>,
    pub priority: f64,
    pub coverage: usize,
    pub cum_error: f64,
    /// CART leaf this region came from.
    pub leaf: usize,
}

fn intervals_overlap(a: (Option<f64>, Option<f64>), b: (Option<f64>, Option<f64>)) -> bool {
    let lo = match (a.0, b.0) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) | (None, x) => x,
    };
    let hi = match (a.1, b.1) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) | (None, x) => x,
    };
    match (lo, hi) {
        (Some(l), Some(h)) => l < h,
        _ => true,
    }
}

impl Region {
    #[inline]
    pub fn contains(&self, row: &[f64]) -> bool {
        self.clauses.iter().all(|c| c.admits(row[c.index]))
    }

    pub fn interval(&self, index: usize) -> (Option<f64>, Option<f64>) {
        self.clauses
            .iter()
            .find(|c| c.index == index)
            .map_or((None, None), |c| (c.lower, c.upper))
    }

    fn constrained_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.clauses.iter().map(|c| c.index)
    }

    /// Furthest point the given bound on `index` may move outward before
    /// this region's box would touch one of `others`. `None` if nothing
    /// blocks it.
    pub fn outward_limit(&self, index: usize, bound: Bound, others: &[Region]) -> Option<f64> {
        let mine = self.interval(index);
        let mut limit: Option<f64> = None;
        for other in others.iter().filter(|o| o.id != self.id) {
            let mut features: Vec<usize> = self.constrained_features().chain(other.constrained_features()).collect();
            features.sort_unstable();
            features.dedup();
            let blocks = features
                .iter()
                .filter(|&&f| f != index)
                .all(|&f| intervals_overlap(self.interval(f), other.interval(f)));
            if !blocks {
                continue;
            }
            let theirs = other.interval(index);
            match bound {
                Bound::Lower => {
                    // neighbours entirely below our lower bound
                    if let (Some(my_lo), Some(their_hi)) = (mine.0, theirs.1) {
                        if their_hi <= my_lo {
                            limit = Some(limit.map_or(their_hi, |l: f64| l.max(their_hi)));
                        }
                    }
                }
                Bound::Upper => {
                    if let (Some(my_hi), Some(their_lo)) = (mine.1, theirs.0) {
                        if their_lo >= my_hi {
                            limit = Some(limit.map_or(their_lo, |l: f64| l.min(their_lo)));
                        }
                    }
                }
            }
        }
        limit
    }

    /// `feature > lo and feature <= hi` rendering, for logs and prompts.
    pub fn describe(&self) -> String {
        if self.clauses.is_empty() {
            return "(all rows)".into();
        }
        let mut parts = Vec::new();
        for c in &self.clauses {
            if let Some(l) = c.lower {
                parts.push(format!("{} > {}", c.feature, l));
            }
            if let Some(u) = c.upper {
                parts.push(format!("{} <= {}", c.feature, u));
            }
        }
        parts.join(" and ")
    }
}

/// Turns a root-to-leaf path into per-feature interval clauses, ordered by
/// feature index.
fn path_clauses(cart: &CartTree, leaf: usize) -> Vec<Clause> {
    let mut clauses: Vec<Clause> = Vec::new();
    for (split, went_left) in cart.tree.path_to(leaf) {
        let pos = match clauses.iter().position(|c| c.index == split.feature) {
            Some(p) => p,
            None => {
                clauses.push(Clause {
                    feature: cart.feature_names[split.feature].clone(),
                    index: split.feature,
                    lower: None,
                    upper: None,
                });
                clauses.len() - 1
            }
        };
        let c = &mut clauses[pos];
        if went_left {
            c.upper = Some(c.upper.map_or(split.threshold, |u| u.min(split.threshold)));
        } else {
            c.lower = Some(c.lower.map_or(split.threshold, |l| l.max(split.threshold)));
        }
    }
    clauses.sort_by_key(|c| c.index);
    clauses
}

/// Priority of every leaf, in leaf-index order.
pub fn leaf_priorities(cart: &CartTree, lambda: f64) -> Vec<(usize, f64)> {
    cart.tree
        .leaves()
        .map(|(id, node)| {
            let err_share = if cart.total_abs_residual > 0.0 {
                node.sum / cart.total_abs_residual
            } else {
                0.0
            };
            let cov_share = node.count as f64 / cart.n_rows as f64;
            (id, lambda * err_share + (1.0 - lambda) * cov_share)
        })
        .collect()
}

pub fn score_and_select(cart: &CartTree, config: &RegionConfig) -> Vec<Region> {
    let mut kept: Vec<(usize, f64)> = leaf_priorities(cart, config.lambda)
        .into_iter()
        .filter(|&(id, c)| c >= config.c_min && cart.tree.nodes[id].mean() > config.min_mean_residual)
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    kept.truncate(config.k_max);
    kept.into_iter()
        .enumerate()
        .map(|(rank, (leaf, priority))| {
            let node = &cart.tree.nodes[leaf];
            Region {
                id: rank,
                clauses: path_clauses(cart, leaf),
                priority: priority.clamp(0.0, 1.0),
                coverage: node.count,
                cum_error: node.sum,
                leaf,
            }
        })
        .collect()
}

/// Residuals, CART and selection in one call.
pub fn mine_regions(
    frozen: &FrozenModel,
    train: &Dataset,
    config: &RegionConfig,
) -> Result<(Vec<Region>, CartTree), RegionError> {
    let r = residuals(frozen, train)?;
    let cart = fit_cart(train, &r.abs(), config)?;
    Ok((score_and_select(&cart, config), cart))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::from_rows;
    use crate::gbdt::GbdtModel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_model(logit: f64, d: usize) -> FrozenModel {
        FrozenModel::from_gbdt(GbdtModel {
            initial_logit: logit,
            learning_rate: 0.1,
            max_depth: 0,
            n_trees: 0,
            n_features: d,
            trees: vec![],
        })
    }

    fn hot_cold() -> (Dataset, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 200.0 + 0.0025]).collect();
        let abs: Vec<f64> = rows.iter().map(|r| if r[0] > 0.5 { 0.9 } else { 0.05 }).collect();
        let d = from_rows(&rows, vec![0; 200], None).unwrap();
        (d, abs)
    }

    /// Exhaustive depth-1 split search written directly from the SSE definition.
    fn brute_force_split(xs: &[f64], ys: &[f64], min_leaf: usize) -> Option<f64> {
        let mut vals = xs.to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let sse = |idx: &[usize]| {
            let m = idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64;
            idx.iter().map(|&i| (ys[i] - m).powi(2)).sum::<f64>()
        };
        let all: Vec<usize> = (0..xs.len()).collect();
        let parent = sse(&all);
        let mut best: Option<(f64, f64)> = None;
        for w in vals.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let l: Vec<usize> = all.iter().copied().filter(|&i| xs[i] <= t).collect();
            let r: Vec<usize> = all.iter().copied().filter(|&i| xs[i] > t).collect();
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let gain = parent - sse(&l) - sse(&r);
            if gain > 1e-12 && best.map_or(true, |b| gain > b.0 + 1e-9) {
                best = Some((gain, t));
            }
        }
        best.map(|b| b.1)
    }

    #[test]
    fn residual_examples() {
        let d = from_rows(&[vec![0.0], vec![1.0]], vec![1, 0], None).unwrap();
        let r = residuals(&constant_model(0.0, 1), &d).unwrap();
        assert_eq!(r.0[1], -0.5);
        let hi = (1.0f64 - 1e-6).ln() - 1e-6f64.ln();
        let r = residuals(&constant_model(hi, 1), &d).unwrap();
        assert!((r.0[0] - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn perfect_scorer_has_tiny_residuals_and_no_regions() {
        let hi = (1.0f64 - 1e-6).ln() - 1e-6f64.ln();
        let rows: Vec<Vec<f64>> = (0..120).map(|i| vec![i as f64]).collect();
        let y: Vec<u8> = (0..120).map(|i| u8::from(i >= 60)).collect();
        let z: Vec<f64> = y.iter().map(|&v| if v == 1 { hi } else { -hi }).collect();
        let r = residuals_from_logits(&y, &z);
        assert!(r.0.iter().all(|v| v.abs() <= 1e-6 + 1e-15));
        let d = from_rows(&rows, y, None).unwrap();
        let cart = fit_cart(&d, &r.abs(), &RegionConfig::default()).unwrap();
        assert!(score_and_select(&cart, &RegionConfig::default()).is_empty());
    }

    #[test]
    fn depth_one_split_matches_brute_force() {
        let (d, abs) = hot_cold();
        let cfg = RegionConfig { max_depth: 1, min_leaf: 30, ..Default::default() };
        let cart = fit_cart(&d, &abs, &cfg).unwrap();
        let split = cart.tree.nodes[0].split.unwrap();
        assert_eq!(Some(split.threshold), brute_force_split(&d.x.column(0), &abs, 30));
        // midpoint of the values straddling 0.5
        assert!((split.threshold - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hot_leaf_priority() {
        let (d, abs) = hot_cold();
        let cfg = RegionConfig { max_depth: 1, ..Default::default() };
        let cart = fit_cart(&d, &abs, &cfg).unwrap();
        let regions = score_and_select(&cart, &cfg);
        let expected = 0.7 * (0.9 / 0.95) + 0.3 * 0.5;
        assert!((regions[0].priority - expected).abs() < 1e-9);
        assert!((regions[0].priority - 0.8132).abs() < 1e-4);
        assert_eq!(regions[0].clauses[0].lower, Some(0.5));
        assert_eq!(regions[0].clauses[0].upper, None);
        assert_eq!(regions[0].coverage, 100);
    }

    #[test]
    fn lambda_one_is_error_share() {
        let (d, abs) = hot_cold();
        let cfg = RegionConfig { max_depth: 1, lambda: 1.0, ..Default::default() };
        let cart = fit_cart(&d, &abs, &cfg).unwrap();
        for (id, c) in leaf_priorities(&cart, 1.0) {
            assert!((c - cart.tree.nodes[id].sum / cart.total_abs_residual).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_trees() {
        let (d, _) = hot_cold();
        let flat = vec![0.3; 200];
        let cart = fit_cart(&d, &flat, &RegionConfig::default()).unwrap();
        assert_eq!(cart.tree.nodes.len(), 1);
        let (_, abs) = hot_cold();
        let cart = fit_cart(&d, &abs, &RegionConfig { max_depth: 0, ..Default::default() }).unwrap();
        assert_eq!(cart.tree.nodes.len(), 1);
        assert_eq!(cart.tree.nodes[0].count, 200);
        let small = from_rows(&vec![vec![0.0]; 10], vec![0; 10], None).unwrap();
        assert!(matches!(
            fit_cart(&small, &[0.0; 10], &RegionConfig::default()),
            Err(RegionError::TooFewRows { .. })
        ));
    }

    #[test]
    fn outward_limit_respects_neighbours() {
        let a = Region {
            id: 0,
            clauses: vec![
                Clause { feature: "x1".into(), index: 0, lower: Some(0.5), upper: None },
                Clause { feature: "x3".into(), index: 2, lower: Some(0.6), upper: None },
            ],
            priority: 0.5,
            coverage: 1,
            cum_error: 1.0,
            leaf: 3,
        };
        let below = Region {
            id: 1,
            clauses: vec![
                Clause { feature: "x1".into(), index: 0, lower: Some(0.5), upper: None },
                Clause { feature: "x3".into(), index: 2, lower: None, upper: Some(0.6) },
            ],
            ..a.clone()
        };
        let elsewhere = Region {
            id: 2,
            clauses: vec![Clause { feature: "x1".into(), index: 0, lower: None, upper: Some(0.5) }],
            ..a.clone()
        };
        assert_eq!(a.outward_limit(2, Bound::Lower, &[below.clone(), elsewhere.clone()]), Some(0.6));
        assert_eq!(a.outward_limit(2, Bound::Lower, &[elsewhere.clone()]), None);
        assert_eq!(a.outward_limit(0, Bound::Lower, &[elsewhere]), Some(0.5));
        assert_eq!(below.outward_limit(2, Bound::Upper, &[a]), Some(0.6));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn regions_are_disjoint_and_leaves_partition_error(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
            let abs: Vec<f64> = rows.iter().map(|r| (r[0] * 2.0 - r[1]).abs() * rng.gen::<f64>()).collect();
            let d = from_rows(&rows, vec![0; 300], None).unwrap();
            let cfg = RegionConfig { min_leaf: 20, c_min: 0.0, k_max: 16, ..Default::default() };
            let cart = fit_cart(&d, &abs, &cfg).unwrap();
            let leaf_total: f64 = cart.tree.leaves().map(|(_, n)| n.sum).sum();
            prop_assert!((leaf_total - cart.total_abs_residual).abs() <= 1e-9);
            let regions = score_and_select(&cart, &cfg);
            for r in &rows {
                prop_assert!(regions.iter().filter(|g| g.contains(r)).count() <= 1);
            }
            for _ in 0..500 {
                let p: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 1.2 - 0.1).collect();
                prop_assert!(regions.iter().filter(|g| g.contains(&p)).count() <= 1);
            }
            for g in &regions {
                let inside = (0..300).filter(|&i| g.contains(d.x.row(i))).count();
                prop_assert_eq!(inside, g.coverage);
                prop_assert!(g.priority >= 0.0 && g.priority <= 1.0);
            }
        }
    }
}
