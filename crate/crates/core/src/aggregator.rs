//! Gating over the legacy score and the regional experts.
//!
//! Each expert contributes `(f, f - p, f / (p + 1e-6))` where `f` is its
//! logit correction and `p` the legacy probability. A shallow GBDT over
//! `[x, p, phi_1..phi_K]` produces the final score, unless it fails to beat
//! the legacy model on a held-out fold, in which case predictions pass the
//! legacy probability through unchanged.

use crate::dataset::{split_indices, DataError, FeatureMatrix};
use crate::expr::ExpertExpr;
use crate::gbdt::{self, GbdtConfig, GbdtError, GbdtModel};
use crate::legacy::PROBA_CLIP;
use crate::metrics::{auc, sigmoid, MetricError};
use crate::par;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RATIO_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("expert {index} expects {expected} features, data has {got}")]
    Schema { index: usize, expected: usize, got: usize },
    #[error("gate layout has {expected} columns, context has {got}")]
    Layout { expected: usize, got: usize },
    #[error("{0} base logits for {1} rows")]
    Length(usize, usize),
    #[error("gate_fit_fraction must be in (0, 1), got {0}")]
    FitFraction(f64),
    #[error("gate fit fold has a single class")]
    SingleClass,
    #[error(transparent)]
    Split(#[from] DataError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionVector {
    pub score: f64,
    pub residual_delta: f64,
    pub ratio: f64,
}

impl InteractionVector {
    pub fn to_array(self) -> [f64; 3] {
        [self.score, self.residual_delta, self.ratio]
    }
}

#[inline]
pub fn interaction_vector(expert_output: f64, base_proba: f64) -> InteractionVector {
    InteractionVector {
        score: expert_output,
        residual_delta: expert_output - base_proba,
        ratio: expert_output / (base_proba + RATIO_EPS),
    }
}

/// Legacy probability as seen by the gate.
#[inline]
pub fn gate_proba(base_logit: f64) -> f64 {
    sigmoid(base_logit).clamp(PROBA_CLIP, 1.0 - PROBA_CLIP)
}

pub fn context_width(d: usize, k: usize) -> usize {
    d + 1 + 3 * k
}

/// Column names of the context matrix.
pub fn feature_layout(names: &[String], k: usize) -> Vec<String> {
    let mut out: Vec<String> = names.to_vec();
    out.push("p_base".into());
    for e in 1..=k {
        for part in ["score", "delta", "ratio"] {
            out.push(format!("phi{e}_{part}"));
        }
    }
    out
}

/// An expert with its slot values resolved once.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertFn {
    pub expr: ExpertExpr,
    values: Vec<f64>,
}

impl ExpertFn {
    pub fn new(expr: ExpertExpr) -> Self {
        let values = expr.values();
        ExpertFn { expr, values }
    }

    #[inline]
    pub fn eval(&self, row: &[f64]) -> f64 {
        self.expr.eval_values(row, &self.values)
    }
}

fn check_schema(d: usize, experts: &[ExpertFn]) -> Result<(), AggregateError> {
    for (index, e) in experts.iter().enumerate() {
        if e.expr.schema.len() != d {
            return Err(AggregateError::Schema {
                index,
                expected: e.expr.schema.len(),
                got: d,
            });
        }
    }
    Ok(())
}

/// Writes one context row into `out`.
#[inline]
pub fn context_row(row: &[f64], base_logit: f64, experts: &[ExpertFn], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(row);
    let p = gate_proba(base_logit);
    out.push(p);
    for e in experts {
        out.extend_from_slice(&interaction_vector(e.eval(row), p).to_array());
    }
}

pub fn build_context(x: &FeatureMatrix, base_logits: &[f64], experts: &[ExpertFn]) -> Result<FeatureMatrix, AggregateError> {
    check_schema(x.n_cols(), experts)?;
    if base_logits.len() != x.n_rows() {
        return Err(AggregateError::Length(base_logits.len(), x.n_rows()));
    }
    let width = context_width(x.n_cols(), experts.len());
    let rows = par::map_range(x.n_rows(), |i| {
        let mut out = Vec::with_capacity(width);
        context_row(x.row(i), base_logits[i], experts, &mut out);
        out
    });
    Ok(FeatureMatrix::new(x.n_rows(), width, rows.concat()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub gate_fit_fraction: f64,
    pub gbdt: GbdtConfig,
    pub seed: u64,
    /// Boost from the fused logit (legacy plus expert scores) rather than
    /// from the base rate.
    pub base_margin: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            gate_fit_fraction: 0.75,
            gbdt: GbdtConfig {
                n_trees: 50,
                max_depth: 3,
                learning_rate: 0.1,
                ..GbdtConfig::default()
            },
            seed: 0,
            base_margin: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateValMetrics {
    pub n: usize,
    pub gate_auc: f64,
    pub legacy_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub feature_layout: Vec<String>,
    pub model: GbdtModel,
    /// Trees add to `logit(p_base) + sum of expert scores` instead of
    /// `model.initial_logit` alone.
    #[serde(default)]
    pub base_margin: bool,
    pub fallback: bool,
    pub fallback_reason: Option<String>,
    pub gate_val: GateValMetrics,
}

impl GateModel {
    /// A gate that always passes the legacy probability through.
    pub fn pass_through(feature_layout: Vec<String>, reason: &str, gate_val: GateValMetrics) -> Self {
        GateModel {
            model: GbdtModel {
                initial_logit: 0.0,
                learning_rate: 0.0,
                max_depth: 0,
                n_trees: 0,
                n_features: feature_layout.len(),
                trees: Vec::new(),
            },
            feature_layout,
            base_margin: false,
            fallback: true,
            fallback_reason: Some(reason.into()),
            gate_val,
        }
    }

    /// Gate logit for one context row.
    #[inline]
    pub fn logit(&self, context: &[f64]) -> f64 {
        let z = self.model.predict_logit_unchecked(context);
        if self.base_margin {
            let d = self.feature_layout.len() - 3 * self.n_experts() - 1;
            z + margin(context, d, self.n_experts())
        } else {
            z
        }
    }

    pub fn n_experts(&self) -> usize {
        self.feature_layout.iter().filter(|n| n.ends_with("_score") && n.starts_with("phi")).count()
    }
}

/// Legacy logit plus every expert's score, read back from a context row.
#[inline]
fn margin(context: &[f64], d: usize, k: usize) -> f64 {
    let p = context[d];
    let scores: f64 = (0..k).map(|e| context[d + 1 + 3 * e]).sum();
    (p / (1.0 - p)).ln() + scores
}

/// Fits the gate on an inner fold of the training rows and checks it on the
/// rest.
pub fn train_gate(
    x: &FeatureMatrix,
    y: &[u8],
    base_logits: &[f64],
    names: &[String],
    experts: &[ExpertFn],
    config: &GateConfig,
) -> Result<GateModel, AggregateError> {
    let f = config.gate_fit_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(AggregateError::FitFraction(f));
    }
    let context = build_context(x, base_logits, experts)?;
    let layout = feature_layout(names, experts.len());
    let (fit, val) = split_indices(y, f, config.seed)?;
    let fit_y: Vec<u8> = fit.iter().map(|&i| y[i]).collect();
    if fit_y.iter().all(|&t| t == fit_y[0]) {
        return Err(AggregateError::SingleClass);
    }
    let val_y: Vec<u8> = val.iter().map(|&i| y[i]).collect();
    let legacy_val: Vec<f64> = val.iter().map(|&i| base_logits[i]).collect();
    let legacy_auc = auc(&val_y, &legacy_val)?;

    if experts.iter().all(|e| e.expr.is_null()) {
        let m = GateValMetrics {
            n: val.len(),
            gate_auc: legacy_auc,
            legacy_auc,
        };
        return Ok(GateModel::pass_through(layout, "all experts are null", m));
    }

    let gcfg = GbdtConfig {
        seed: config.seed,
        ..config.gbdt.clone()
    };
    let fit_ctx = context.select_rows(&fit);
    let model = if config.base_margin {
        let d = x.n_cols();
        let offset: Vec<f64> = fit_ctx.rows().map(|r| margin(r, d, experts.len())).collect();
        gbdt::train_with_offset(&fit_ctx, &fit_y, &offset, &gcfg)?
    } else {
        gbdt::train(&fit_ctx, &fit_y, &gcfg)?
    };
    let mut gate = GateModel {
        feature_layout: layout,
        model,
        base_margin: config.base_margin,
        fallback: false,
        fallback_reason: None,
        gate_val: GateValMetrics {
            n: val.len(),
            gate_auc: f64::NAN,
            legacy_auc,
        },
    };
    let val_ctx = context.select_rows(&val);
    let gate_val: Vec<f64> = val_ctx.rows().map(|r| gate.logit(r)).collect();
    let gate_auc = auc(&val_y, &gate_val)?;
    gate.gate_val.gate_auc = gate_auc;
    if gate_auc < legacy_auc {
        return Ok(GateModel::pass_through(gate.feature_layout, "gate AUC below legacy AUC on gate_val", gate.gate_val));
    }
    Ok(gate)
}

/// Final probabilities. Needs the experts in the order the gate was
/// trained with.
pub fn predict_final(
    x: &FeatureMatrix,
    base_logits: &[f64],
    experts: &[ExpertFn],
    gate: &GateModel,
) -> Result<Vec<f64>, AggregateError> {
    check_schema(x.n_cols(), experts)?;
    if base_logits.len() != x.n_rows() {
        return Err(AggregateError::Length(base_logits.len(), x.n_rows()));
    }
    let width = context_width(x.n_cols(), experts.len());
    if gate.feature_layout.len() != width || gate.model.n_features != width {
        return Err(AggregateError::Layout {
            expected: gate.feature_layout.len(),
            got: width,
        });
    }
    if gate.fallback {
        return Ok(base_logits.iter().map(|&z| sigmoid(z)).collect());
    }
    Ok(par::map_range(x.n_rows(), |i| {
        let mut buf = Vec::with_capacity(width);
        context_row(x.row(i), base_logits[i], experts, &mut buf);
        sigmoid(gate.logit(&buf))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn schema(d: usize) -> Arc<[String]> {
        (1..=d).map(|j| format!("x{j}")).collect::<Vec<_>>().into()
    }

    fn expert(text: &str, d: usize) -> ExpertFn {
        ExpertFn::new(parse(text, &schema(d)).unwrap())
    }

    #[test]
    fn vector_examples() {
        let v = interaction_vector(0.2, 0.5);
        assert_eq!(v.score, 0.2);
        assert!((v.residual_delta + 0.3).abs() < 1e-15);
        assert!((v.ratio - 0.2 / 0.500001).abs() < 1e-15);
        assert!((v.ratio - 0.39999920).abs() < 1e-8);
        assert_eq!(interaction_vector(0.0, 0.7).to_array(), [0.0, -0.7, 0.0]);
        assert_eq!(interaction_vector(1e-6, gate_proba(-40.0)).ratio, 0.5);
    }

    proptest! {
        #[test]
        fn vector_closed_form(f in -3.0f64..3.0, p in 1e-6f64..(1.0 - 1e-6)) {
            let v = interaction_vector(f, p);
            prop_assert!((v.score - f).abs() <= 1e-12);
            prop_assert!((v.residual_delta - (f - p)).abs() <= 1e-12);
            prop_assert!((v.ratio - f / (p + 1e-6)).abs() <= 1e-12 * (1.0 + v.ratio.abs()));
        }
    }

    fn two_experts() -> Vec<ExpertFn> {
        vec![
            expert("if `x1` <= 0.5 then 1 + `x2` else 0", 4),
            expert("if `x1` > 0.5 and `x3` > 0.2 then -0.5 else 0", 4),
        ]
    }

    #[test]
    fn context_layout_and_sparsity() {
        let x = FeatureMatrix::from_rows(&[
            vec![0.2, 0.5, 0.0, 0.0],
            vec![0.9, 0.5, 0.9, 0.0],
            vec![0.9, 0.5, 0.1, 0.0],
        ])
        .unwrap();
        let ctx = build_context(&x, &[0.0, 1.0, -1.0], &two_experts()).unwrap();
        assert_eq!(ctx.n_cols(), 11);
        assert_eq!(feature_layout(&schema(4), 2).len(), 11);
        assert_eq!(ctx.row(0)[4], 0.5);
        assert_eq!(&ctx.row(0)[5..8], &interaction_vector(1.5, 0.5).to_array());
        assert_eq!(ctx.row(0)[8], 0.0);
        assert_eq!(ctx.row(1)[5], 0.0);
        assert_eq!(ctx.row(1)[8], -0.5);
        // outside both regions
        assert_eq!([ctx.row(2)[5], ctx.row(2)[8]], [0.0, 0.0]);
        assert_eq!(ctx.row(2)[6], -gate_proba(-1.0));
        let wrong = expert("if true then 1 else 0", 3);
        assert!(matches!(
            build_context(&x, &[0.0; 3], &[wrong]),
            Err(AggregateError::Schema { .. })
        ));
    }

    fn gate_task(n: usize) -> (FeatureMatrix, Vec<u8>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|r| {
                let z = 2.0 * r[1] - 1.0 + if r[0] <= 0.5 { 3.0 * (r[1] - 0.5) } else { 0.0 };
                u8::from(rng.gen::<f64>() < sigmoid(z))
            })
            .collect();
        let logits = rows.iter().map(|r| 2.0 * r[1] - 1.0).collect();
        (FeatureMatrix::from_rows(&rows).unwrap(), y, logits)
    }

    #[test]
    fn gate_beats_legacy_with_useful_expert() {
        let (x, y, z) = gate_task(3000);
        let experts = vec![expert("if `x1` <= 0.5 then 3 * (`x2` - 0.5) else 0", 4)];
        let plain = GateConfig { base_margin: false, ..Default::default() };
        let gate = train_gate(&x, &y, &z, &schema(4), &experts, &plain).unwrap();
        assert!(!gate.fallback && gate.model.initial_logit != 0.0, "{:?}", gate.gate_val);
        let gate = train_gate(&x, &y, &z, &schema(4), &experts, &GateConfig::default()).unwrap();
        assert!(!gate.fallback && gate.base_margin, "{:?}", gate.gate_val);
        assert!(gate.gate_val.gate_auc >= gate.gate_val.legacy_auc);
        assert_eq!(gate.n_experts(), 1);
        let p = predict_final(&x, &z, &experts, &gate).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        // artifact round trip
        let json = serde_json::to_string(&gate).unwrap();
        let back: GateModel = serde_json::from_str(&json).unwrap();
        assert_eq!(predict_final(&x, &z, &experts, &back).unwrap(), p);
    }

    #[test]
    fn null_experts_pass_through() {
        let (x, y, z) = gate_task(500);
        let experts = vec![expert("if `x1` <= 0.5 then 0 else 0", 4)];
        let gate = train_gate(&x, &y, &z, &schema(4), &experts, &GateConfig::default()).unwrap();
        assert!(gate.fallback);
        let p = predict_final(&x, &z, &experts, &gate).unwrap();
        let legacy: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        assert_eq!(p, legacy);
    }

    #[test]
    fn safety_on_gate_val_fold() {
        let (x, _, z) = gate_task(600);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // labels follow the legacy score up to 2% flips; the expert is noise
        let y: Vec<u8> = z
            .iter()
            .map(|&v| u8::from(v > 0.0) ^ u8::from(rng.gen::<f64>() < 0.02))
            .collect();
        for text in ["if true then 3 * (`x4` - 0.5) else 0", "if `x1` <= 0.5 then 3 * (`x2` - 0.5) else 0"] {
            let experts = vec![expert(text, 4)];
            let cfg = GateConfig::default();
            let gate = train_gate(&x, &y, &z, &schema(4), &experts, &cfg).unwrap();
            let (_, val) = split_indices(&y, cfg.gate_fit_fraction, cfg.seed).unwrap();
            let p = predict_final(&x, &z, &experts, &gate).unwrap();
            let vy: Vec<u8> = val.iter().map(|&i| y[i]).collect();
            let final_auc = auc(&vy, &val.iter().map(|&i| p[i]).collect::<Vec<_>>()).unwrap();
            let legacy_auc = auc(&vy, &val.iter().map(|&i| z[i]).collect::<Vec<_>>()).unwrap();
            assert!(final_auc >= legacy_auc, "{text}: {final_auc} < {legacy_auc}");
        }
    }

    #[test]
    fn fit_fraction_one_is_rejected() {
        let (x, y, z) = gate_task(100);
        let cfg = GateConfig {
            gate_fit_fraction: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            train_gate(&x, &y, &z, &schema(4), &two_experts(), &cfg),
            Err(AggregateError::FitFraction(_))
        ));
    }

    #[test]
    fn zero_tree_gate_is_constant() {
        let (x, _, z) = gate_task(50);
        let gate = GateModel {
            feature_layout: feature_layout(&schema(4), 2),
            model: GbdtModel {
                initial_logit: 0.3,
                learning_rate: 0.1,
                max_depth: 0,
                n_trees: 0,
                n_features: 11,
                trees: vec![],
            },
            base_margin: false,
            fallback: false,
            fallback_reason: None,
            gate_val: GateValMetrics { n: 0, gate_auc: 0.5, legacy_auc: 0.5 },
        };
        let p = predict_final(&x, &z, &two_experts(), &gate).unwrap();
        assert!(p.iter().all(|&v| v == sigmoid(0.3)));
        // with a margin, an empty ensemble reproduces the fused score
        let mut with_margin = gate.clone();
        with_margin.base_margin = true;
        with_margin.model.initial_logit = 0.0;
        let p = predict_final(&x, &z, &two_experts(), &with_margin).unwrap();
        for i in 0..x.n_rows() {
            let fused = z[i] + two_experts().iter().map(|e| e.eval(x.row(i))).sum::<f64>();
            assert!((p[i] - sigmoid(fused)).abs() < 1e-12);
        }
        assert!(matches!(predict_final(&x, &z, &two_experts()[..1], &gate), Err(AggregateError::Layout { .. })));
    }
}
