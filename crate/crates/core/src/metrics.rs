//! Binary-classification evaluation primitives.
//!
//! AUC follows the Mann-Whitney formulation with ties counted as one half,
//! KS is the largest gap between the class-conditional empirical CDFs, and
//! logloss clips probabilities to `[1e-9, 1 - 1e-9]`.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Probability clip applied inside [`logloss`].
pub const LOGLOSS_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {labels} labels vs {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("metric requires both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("empty input")]
    Empty,
}

fn check_lengths(y: &[u8], s: &[f64]) -> Result<(), MetricError> {
    if y.len() != s.len() {
        return Err(MetricError::LengthMismatch {
            labels: y.len(),
            scores: s.len(),
        });
    }
    Ok(())
}

fn class_counts(y: &[u8]) -> Result<(usize, usize), MetricError> {
    let positives = y.iter().filter(|&&v| v == 1).count();
    let negatives = y.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass {
            positives,
            negatives,
        });
    }
    Ok((positives, negatives))
}

/// Indices sorted by ascending score. NaN scores sort last.
fn sorted_order(s: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    order
}

/// Walks tie groups of `order` and yields `(positives, negatives)` per group.
fn tie_groups(y: &[u8], s: &[f64], order: &[usize]) -> Vec<(u64, u64)> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let value = s[order[i]];
        let (mut pos, mut neg) = (0u64, 0u64);
        while i < order.len() && s[order[i]] == value {
            if y[order[i]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        groups.push((pos, neg));
    }
    groups
}

/// Area under the ROC curve.
pub fn auc(y: &[u8], s: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, s)?;
    let (n_pos, n_neg) = class_counts(y)?;
    let order = sorted_order(s);
    // twice the number of ordered pairs, so ties stay integral
    let mut doubled: u128 = 0;
    let mut neg_below: u64 = 0;
    for (pos, neg) in tie_groups(y, s, &order) {
        doubled += 2 * pos as u128 * neg_below as u128 + pos as u128 * neg as u128;
        neg_below += neg;
    }
    Ok(doubled as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Kolmogorov-Smirnov statistic: the largest gap between the class-conditional
/// score CDFs, `max_t |F1(t) - F0(t)|` (equivalently `max |TPR - FPR|`).
pub fn ks(y: &[u8], s: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, s)?;
    let (n_pos, n_neg) = class_counts(y)?;
    let order = sorted_order(s);
    let mut best = 0.0f64;
    let (mut below_pos, mut below_neg) = (0u64, 0u64);
    for (pos, neg) in tie_groups(y, s, &order) {
        below_pos += pos;
        below_neg += neg;
        let gap = (below_pos as f64 / n_pos as f64 - below_neg as f64 / n_neg as f64).abs();
        best = best.max(gap);
    }
    Ok(best)
}

/// Mean binary cross-entropy with probabilities clipped to `[1e-9, 1 - 1e-9]`.
pub fn logloss(y: &[u8], p: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, p)?;
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    let total: f64 = y
        .iter()
        .zip(p)
        .map(|(&label, &prob)| pointwise_logloss(label, prob))
        .sum();
    Ok(total / y.len() as f64)
}

#[inline]
pub fn pointwise_logloss(label: u8, prob: f64) -> f64 {
    let q = prob.clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS);
    if label == 1 {
        -q.ln()
    } else {
        -(1.0 - q).ln()
    }
}

/// Fraction of rows where `(p >= threshold) == y`.
pub fn accuracy(y: &[u8], p: &[f64], threshold: f64) -> Result<f64, MetricError> {
    check_lengths(y, p)?;
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = y
        .iter()
        .zip(p)
        .filter(|(&label, &prob)| (prob >= threshold) == (label == 1))
        .count();
    Ok(hits as f64 / y.len() as f64)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub auc: f64,
    pub ks: f64,
    pub accuracy: f64,
    pub logloss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub auc: f64,
    pub ks: f64,
    pub accuracy: f64,
    pub logloss: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<MetricDeltas>,
}

impl EvalReport {
    pub fn compute(label: &str, y: &[u8], p: &[f64]) -> Result<Self, MetricError> {
        Ok(EvalReport {
            label: label.to_string(),
            auc: auc(y, p)?,
            ks: ks(y, p)?,
            accuracy: accuracy(y, p, 0.5)?,
            logloss: logloss(y, p)?,
            n: y.len(),
            deltas: None,
        })
    }

    /// Returns a copy annotated with `self - baseline` for every metric.
    pub fn against(mut self, baseline: &EvalReport) -> Self {
        self.deltas = Some(MetricDeltas {
            auc: self.auc - baseline.auc,
            ks: self.ks - baseline.ks,
            accuracy: self.accuracy - baseline.accuracy,
            logloss: self.logloss - baseline.logloss,
        });
        self
    }
}

/// Aligned-column rendering of several reports.
pub struct ReportTable<'a>(pub &'a [EvalReport]);

impl fmt::Display for ReportTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "model", "n", "auc", "ks", "accuracy", "logloss", "d_auc", "d_ks"
        )?;
        for r in self.0 {
            let (da, dk) = r
                .deltas
                .as_ref()
                .map(|d| (format!("{:+.6}", d.auc), format!("{:+.6}", d.ks)))
                .unwrap_or_else(|| ("-".into(), "-".into()));
            writeln!(
                f,
                "{:<12} {:>8} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10} {:>10}",
                r.label, r.n, r.auc, r.ks, r.accuracy, r.logloss, da, dk
            )?;
        }
        Ok(())
    }
}
