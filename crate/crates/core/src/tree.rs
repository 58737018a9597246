//! Exact greedy regression trees with variance-reduction splits.
//!
//! Shared by the boosting learner (fitting gradients) and the residual CART
//! (fitting absolute residuals). Rows with `x[f] <= threshold` go left.
//! Thresholds are midpoints between consecutive distinct values. Ties
//! between candidate splits resolve to the lowest feature index, then the
//! lowest threshold.

use crate::dataset::FeatureMatrix;
use crate::par;
use serde::{Deserialize, Serialize};

/// Smallest variance reduction that counts as an improvement.
const MIN_GAIN: f64 = 1e-12;
/// Node size (rows x candidate features) above which features are scanned in parallel.
const PAR_WORK: usize = 32_768;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub split: Option<Split>,
    pub left: usize,
    pub right: usize,
    pub depth: usize,
    /// Training rows routed here.
    pub count: usize,
    /// Sum of targets over those rows.
    pub sum: f64,
}

impl Node {
    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    #[inline]
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams<'a> {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Restricts candidate split features; `None` means all columns.
    pub features: Option<&'a [usize]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

#[inline]
fn beats(candidate: f64, incumbent: f64) -> bool {
    candidate > incumbent + MIN_GAIN * incumbent.abs().max(1.0)
}

/// Best split of `rows` on one feature, or `None` if no admissible split
/// reduces squared error.
pub fn best_split_on_feature(
    x: &FeatureMatrix,
    targets: &[f64],
    rows: &[usize],
    feature: usize,
    min_leaf: usize,
) -> Option<BestSplit> {
    let n = rows.len();
    let min_leaf = min_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let mut order: Vec<(f64, f64)> = rows.iter().map(|&i| (x.get(i, feature), targets[i])).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = order.iter().map(|p| p.1).sum();
    let parent = total * total / n as f64;

    let mut best: Option<BestSplit> = None;
    let mut left_sum = 0.0;
    for k in 0..n - 1 {
        left_sum += order[k].1;
        let n_left = k + 1;
        let n_right = n - n_left;
        if n_left < min_leaf {
            continue;
        }
        if n_right < min_leaf {
            break;
        }
        if order[k].0 == order[k + 1].0 {
            continue;
        }
        let right_sum = total - left_sum;
        let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64 - parent;
        let incumbent = best.map_or(0.0, |b| b.gain);
        if beats(gain, incumbent) && gain > MIN_GAIN {
            best = Some(BestSplit {
                feature,
                threshold: 0.5 * (order[k].0 + order[k + 1].0),
                gain,
            });
        }
    }
    best
}

/// Best split over all candidate features.
pub fn best_split(
    x: &FeatureMatrix,
    targets: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<BestSplit> {
    let per_feature: Vec<Option<BestSplit>> = if rows.len() * features.len() >= PAR_WORK {
        par::map_slice(features, |&f| best_split_on_feature(x, targets, rows, f, min_leaf))
    } else {
        features
            .iter()
            .map(|&f| best_split_on_feature(x, targets, rows, f, min_leaf))
            .collect()
    };
    let mut best: Option<BestSplit> = None;
    for cand in per_feature.into_iter().flatten() {
        match best {
            None => best = Some(cand),
            Some(b) if beats(cand.gain, b.gain) => best = Some(cand),
            _ => {}
        }
    }
    best
}

impl RegressionTree {
    /// Fits a tree to `targets` over the given rows of `x`.
    pub fn fit(x: &FeatureMatrix, targets: &[f64], rows: &[usize], params: TreeParams<'_>) -> Self {
        let all: Vec<usize>;
        let features = match params.features {
            Some(f) => f,
            None => {
                all = (0..x.n_cols()).collect();
                &all
            }
        };
        let mut tree = RegressionTree { nodes: Vec::new() };
        tree.grow(x, targets, rows.to_vec(), 0, features, &params);
        tree
    }

    fn grow(
        &mut self,
        x: &FeatureMatrix,
        targets: &[f64],
        rows: Vec<usize>,
        depth: usize,
        features: &[usize],
        params: &TreeParams<'_>,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            split: None,
            left: 0,
            right: 0,
            depth,
            count: rows.len(),
            sum: rows.iter().map(|&i| targets[i]).sum(),
        });
        if depth >= params.max_depth {
            return id;
        }
        let Some(best) = best_split(x, targets, &rows, features, params.min_leaf) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| x.get(i, best.feature) <= best.threshold);
        let left = self.grow(x, targets, left_rows, depth + 1, features, params);
        let right = self.grow(x, targets, right_rows, depth + 1, features, params);
        let node = &mut self.nodes[id];
        node.split = Some(Split {
            feature: best.feature,
            threshold: best.threshold,
        });
        node.left = left;
        node.right = right;
        id
    }

    /// Index of the leaf that `row` routes to.
    #[inline]
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut id = 0;
        while let Some(s) = self.nodes[id].split {
            id = if row[s.feature] <= s.threshold {
                self.nodes[id].left
            } else {
                self.nodes[id].right
            };
        }
        id
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Root-to-leaf path as `(split, went_left)` pairs.
    pub fn path_to(&self, leaf: usize) -> Vec<(Split, bool)> {
        let mut parent = vec![usize::MAX; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.is_leaf() {
                parent[n.left] = i;
                parent[n.right] = i;
            }
        }
        let mut path = Vec::new();
        let mut cur = leaf;
        while parent[cur] != usize::MAX {
            let p = parent[cur];
            let node = &self.nodes[p];
            path.push((node.split.expect("parent is internal"), node.left == cur));
            cur = p;
        }
        path.reverse();
        path
    }
}
