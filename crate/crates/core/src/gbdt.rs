//! Logistic gradient boosting over exact greedy regression trees.
//!
//! Each round fits a tree to the negative gradient `y - p` under squared
//! error; leaf values are the mean gradient of their rows and are scaled by
//! the learning rate at prediction time. There is no row or column
//! subsampling. The seed only exists so configs round-trip unchanged.

use crate::dataset::FeatureMatrix;
use crate::metrics::sigmoid;
use crate::tree::{RegressionTree, TreeParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BASE_RATE_CLIP: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GbdtError {
    #[error("training data has no rows")]
    Empty,
    #[error("training data has no features")]
    NoFeatures,
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("feature subset references column {0}, but data has {1} columns")]
    BadFeature(usize, usize),
    #[error("learning rate {0} outside (0, 1]")]
    BadLearningRate(f64),
    #[error("row has {got} features, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("malformed model artifact: {0}")]
    Artifact(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub seed: u64,
    /// Columns the learner may split on; `None` means every column.
    pub features: Option<Vec<usize>>,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
            seed: 0,
            features: None,
        }
    }
}

/// One tree in flat-array form; leaves have `feature == -1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatTree {
    pub feature: Vec<i64>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
}

impl FlatTree {
    fn from_tree(tree: &RegressionTree) -> Self {
        let n = tree.nodes.len();
        let mut flat = FlatTree {
            feature: Vec::with_capacity(n),
            threshold: Vec::with_capacity(n),
            left: Vec::with_capacity(n),
            right: Vec::with_capacity(n),
            value: Vec::with_capacity(n),
        };
        for node in &tree.nodes {
            match node.split {
                Some(s) => {
                    flat.feature.push(s.feature as i64);
                    flat.threshold.push(s.threshold);
                    flat.left.push(node.left as u32);
                    flat.right.push(node.right as u32);
                    flat.value.push(0.0);
                }
                None => {
                    flat.feature.push(-1);
                    flat.threshold.push(0.0);
                    flat.left.push(0);
                    flat.right.push(0);
                    flat.value.push(node.mean());
                }
            }
        }
        flat
    }

    #[inline]
    pub fn leaf_value(&self, row: &[f64]) -> f64 {
        let mut id = 0usize;
        loop {
            let f = self.feature[id];
            if f < 0 {
                return self.value[id];
            }
            id = if row[f as usize] <= self.threshold[id] {
                self.left[id] as usize
            } else {
                self.right[id] as usize
            };
        }
    }

    fn validate(&self, n_features: usize) -> Result<(), GbdtError> {
        let n = self.feature.len();
        if n == 0
            || [self.threshold.len(), self.left.len(), self.right.len(), self.value.len()]
                .iter()
                .any(|&l| l != n)
        {
            return Err(GbdtError::Artifact("tree arrays have inconsistent lengths".into()));
        }
        for i in 0..n {
            let f = self.feature[i];
            if f >= 0 {
                if f as usize >= n_features {
                    return Err(GbdtError::Artifact(format!("node {i} splits on feature {f}")));
                }
                let (l, r) = (self.left[i] as usize, self.right[i] as usize);
                if l <= i || r <= i || l >= n || r >= n {
                    return Err(GbdtError::Artifact(format!("node {i} has invalid children")));
                }
            } else if !self.value[i].is_finite() {
                return Err(GbdtError::Artifact(format!("leaf {i} is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub initial_logit: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_trees: usize,
    pub n_features: usize,
    pub trees: Vec<FlatTree>,
}

impl GbdtModel {
    pub fn predict_logit(&self, row: &[f64]) -> Result<f64, GbdtError> {
        if row.len() != self.n_features {
            return Err(GbdtError::Dimension {
                expected: self.n_features,
                got: row.len(),
            });
        }
        Ok(self.predict_logit_unchecked(row))
    }

    #[inline]
    pub fn predict_logit_unchecked(&self, row: &[f64]) -> f64 {
        let increments: f64 = self.trees.iter().map(|t| t.leaf_value(row)).sum();
        self.initial_logit + self.learning_rate * increments
    }

    pub fn predict_proba(&self, row: &[f64]) -> Result<f64, GbdtError> {
        self.predict_logit(row).map(sigmoid)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GbdtError> {
        let model: GbdtModel = serde_json::from_str(text).map_err(|e| GbdtError::Artifact(e.to_string()))?;
        if !model.initial_logit.is_finite() {
            return Err(GbdtError::Artifact("initial_logit is not finite".into()));
        }
        if model.trees.len() > model.n_trees {
            return Err(GbdtError::Artifact("more trees than n_trees".into()));
        }
        for t in &model.trees {
            t.validate(model.n_features)?;
        }
        Ok(model)
    }
}

/// Trains a logistic GBDT on `(x, y)`.
pub fn train(x: &FeatureMatrix, y: &[u8], config: &GbdtConfig) -> Result<GbdtModel, GbdtError> {
    fit(x, y, None, config)
}

/// Boosts from a per-row starting logit instead of the base rate. The
/// returned model has `initial_logit == 0`; callers add the offset back at
/// prediction time.
pub fn train_with_offset(x: &FeatureMatrix, y: &[u8], offset: &[f64], config: &GbdtConfig) -> Result<GbdtModel, GbdtError> {
    if offset.len() != x.n_rows() {
        return Err(GbdtError::LabelCount {
            rows: x.n_rows(),
            labels: offset.len(),
        });
    }
    fit(x, y, Some(offset), config)
}

fn fit(x: &FeatureMatrix, y: &[u8], offset: Option<&[f64]>, config: &GbdtConfig) -> Result<GbdtModel, GbdtError> {
    let n = x.n_rows();
    if n == 0 {
        return Err(GbdtError::Empty);
    }
    if x.n_cols() == 0 {
        return Err(GbdtError::NoFeatures);
    }
    if y.len() != n {
        return Err(GbdtError::LabelCount { rows: n, labels: y.len() });
    }
    if !(config.learning_rate > 0.0 && config.learning_rate <= 1.0) {
        return Err(GbdtError::BadLearningRate(config.learning_rate));
    }
    if let Some(fs) = &config.features {
        if let Some(&bad) = fs.iter().find(|&&f| f >= x.n_cols()) {
            return Err(GbdtError::BadFeature(bad, x.n_cols()));
        }
    }
    let features: Vec<usize> = match &config.features {
        Some(fs) => {
            let mut fs = fs.clone();
            fs.sort_unstable();
            fs.dedup();
            fs
        }
        None => (0..x.n_cols()).collect(),
    };

    let labels: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let mean = labels.iter().sum::<f64>() / n as f64;
    let p0 = mean.clamp(BASE_RATE_CLIP, 1.0 - BASE_RATE_CLIP);
    let (initial_logit, mut logits) = match offset {
        Some(o) => (0.0, o.to_vec()),
        None => {
            let z0 = (p0 / (1.0 - p0)).ln();
            (z0, vec![z0; n])
        }
    };

    let rows: Vec<usize> = (0..n).collect();
    let mut gradients = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_trees);
    let params = TreeParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        features: Some(&features),
    };
    for _ in 0..config.n_trees {
        for i in 0..n {
            gradients[i] = labels[i] - sigmoid(logits[i]);
        }
        let tree = RegressionTree::fit(x, &gradients, &rows, params);
        let flat = FlatTree::from_tree(&tree);
        for (i, z) in logits.iter_mut().enumerate() {
            *z += config.learning_rate * flat.leaf_value(x.row(i));
        }
        trees.push(flat);
    }
    Ok(GbdtModel {
        initial_logit,
        learning_rate: config.learning_rate,
        max_depth: config.max_depth,
        n_trees: config.n_trees,
        n_features: x.n_cols(),
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{accuracy, logloss};
    use proptest::prelude::*;

    fn separable(n: usize) -> (FeatureMatrix, Vec<u8>) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64, ((i * 7) % 5) as f64]).collect();
        let y = (0..n).map(|i| u8::from(i >= n / 2)).collect();
        (FeatureMatrix::from_rows(&rows).unwrap(), y)
    }

    /// Hand-rolled depth-1 boosting on one feature, written independently
    /// of the tree module: enumerate every midpoint, keep the best SSE
    /// reduction, step by lr times the side means.
    fn reference_stumps(xs: &[f64], y: &[u8], rounds: usize, lr: f64, min_leaf: usize) -> Vec<f64> {
        let n = xs.len();
        let mean = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let mut z = vec![(mean / (1.0 - mean)).ln(); n];
        for _ in 0..rounds {
            let g: Vec<f64> = (0..n).map(|i| y[i] as f64 - 1.0 / (1.0 + (-z[i]).exp())).collect();
            let mut vals: Vec<f64> = xs.to_vec();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let mut best: Option<(f64, f64, f64, f64)> = None;
            for w in vals.windows(2) {
                let t = 0.5 * (w[0] + w[1]);
                let l: Vec<usize> = (0..n).filter(|&i| xs[i] <= t).collect();
                let r: Vec<usize> = (0..n).filter(|&i| xs[i] > t).collect();
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let ml = l.iter().map(|&i| g[i]).sum::<f64>() / l.len() as f64;
                let mr = r.iter().map(|&i| g[i]).sum::<f64>() / r.len() as f64;
                let sse: f64 = l.iter().map(|&i| (g[i] - ml).powi(2)).sum::<f64>()
                    + r.iter().map(|&i| (g[i] - mr).powi(2)).sum::<f64>();
                if best.map_or(true, |b| sse < b.0 - 1e-12) {
                    best = Some((sse, t, ml, mr));
                }
            }
            let (_, t, ml, mr) = best.expect("split exists");
            for i in 0..n {
                z[i] += lr * if xs[i] <= t { ml } else { mr };
            }
        }
        z
    }

    #[test]
    fn zero_trees_predicts_base_rate() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let cfg = GbdtConfig { n_trees: 0, ..Default::default() };
        let m = train(&x, &[0, 1], &cfg).unwrap();
        assert_eq!(m.predict_logit(&[0.0]).unwrap(), 0.0);
        assert_eq!(m.predict_logit(&[9.0]).unwrap(), m.initial_logit);
        assert_eq!(m.predict_proba(&[0.3]).unwrap(), 0.5);
    }

    #[test]
    fn empty_data_is_an_error() {
        let x = FeatureMatrix::new(0, 1, vec![]);
        assert_eq!(train(&x, &[], &GbdtConfig::default()), Err(GbdtError::Empty));
    }

    #[test]
    fn single_class_is_permitted() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let m = train(&x, &[1, 1, 1], &GbdtConfig { n_trees: 5, min_leaf: 1, ..Default::default() }).unwrap();
        let p = m.predict_proba(&[1.0]).unwrap();
        assert!(p > 0.99 && p < 1.0);
    }

    #[test]
    fn separable_stumps_match_reference_and_fit_perfectly() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let cfg = GbdtConfig { n_trees: 20, max_depth: 1, learning_rate: 0.3, min_leaf: 1, ..Default::default() };
        let m = train(&x, &y, &cfg).unwrap();
        let reference = reference_stumps(&xs, &y, 20, 0.3, 1);
        for (i, r) in rows.iter().enumerate() {
            assert!((m.predict_logit(r).unwrap() - reference[i]).abs() < 1e-12);
        }
        let p: Vec<f64> = rows.iter().map(|r| m.predict_proba(r).unwrap()).collect();
        assert_eq!(accuracy(&y, &p, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn offset_boosting_starts_from_the_offset() {
        let (x, y) = separable(60);
        let offset: Vec<f64> = (0..60).map(|i| (i as f64 - 30.0) / 20.0).collect();
        let m0 = train_with_offset(&x, &y, &offset, &GbdtConfig { n_trees: 0, ..Default::default() }).unwrap();
        assert_eq!(m0.initial_logit, 0.0);
        assert!(x.rows().all(|r| m0.predict_logit(r).unwrap() == 0.0));

        let cfg = GbdtConfig { n_trees: 10, min_leaf: 2, ..Default::default() };
        let m = train_with_offset(&x, &y, &offset, &cfg).unwrap();
        let loss = |add: bool| {
            let p: Vec<f64> = (0..60)
                .map(|i| sigmoid(offset[i] + if add { m.predict_logit(x.row(i)).unwrap() } else { 0.0 }))
                .collect();
            logloss(&y, &p).unwrap()
        };
        assert!(loss(true) < loss(false));
        assert!(train_with_offset(&x, &y, &offset[1..], &cfg).is_err());
    }

    #[test]
    fn training_loss_is_monotone() {
        let (x, y) = separable(60);
        for lr in [0.05, 0.1, 0.3] {
            let mut prev = f64::INFINITY;
            for k in 0..=15 {
                let cfg = GbdtConfig { n_trees: k, learning_rate: lr, min_leaf: 2, ..Default::default() };
                let m = train(&x, &y, &cfg).unwrap();
                let p: Vec<f64> = x.rows().map(|r| m.predict_proba(r).unwrap()).collect();
                let loss = logloss(&y, &p).unwrap();
                assert!(loss <= prev + 1e-15, "lr {lr}, tree {k}: {loss} > {prev}");
                prev = loss;
            }
        }
    }

    #[test]
    fn routed_leaf_value_is_monotone_in_the_signal_feature() {
        let (x, y) = separable(40);
        let cfg = GbdtConfig { n_trees: 1, max_depth: 2, min_leaf: 2, ..Default::default() };
        let m = train(&x, &y, &cfg).unwrap();
        let tree = &m.trees[0];
        // enumerate leaves along a sweep of the signal feature
        let mut last = f64::NEG_INFINITY;
        for k in 0..=100 {
            let v = tree.leaf_value(&[k as f64 / 100.0, 0.0]);
            assert!(v >= last - 1e-15);
            last = v;
        }
    }

    #[test]
    fn feature_subset_restricts_splits() {
        let (x, y) = separable(40);
        let cfg = GbdtConfig { n_trees: 3, features: Some(vec![1]), min_leaf: 2, ..Default::default() };
        let m = train(&x, &y, &cfg).unwrap();
        assert!(m.trees.iter().all(|t| t.feature.iter().all(|&f| f == -1 || f == 1)));
        let bad = GbdtConfig { features: Some(vec![5]), ..Default::default() };
        assert!(matches!(train(&x, &y, &bad), Err(GbdtError::BadFeature(5, 2))));
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let (x, y) = separable(50);
        let cfg = GbdtConfig { n_trees: 4, min_leaf: 2, ..Default::default() };
        let a = train(&x, &y, &cfg).unwrap();
        let b = train(&x, &y, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let back = GbdtModel::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert!(matches!(a.predict_logit(&[1.0]), Err(GbdtError::Dimension { .. })));
        assert!(GbdtModel::from_json("{\"initial_logit\": 0}").is_err());
    }

    proptest! {
        #[test]
        fn probabilities_stay_open_unit(v in -1e6f64..1e6, w in -1e6f64..1e6) {
            let (x, y) = separable(30);
            let m = train(&x, &y, &GbdtConfig { n_trees: 10, learning_rate: 1.0, min_leaf: 1, ..Default::default() }).unwrap();
            let p = m.predict_proba(&[v, w]).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
