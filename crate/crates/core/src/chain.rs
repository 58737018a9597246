//! One outer loop per region: propose a structure, tune it, accept or
//! reject on validation AUC.

use crate::dataset::{Dataset, FeatureStats};
use crate::expr::{Atom, Cmp, ExpertExpr, GuardClause, Node, ParamKind, ParamSlot};
use crate::metrics::{auc, pointwise_logloss, sigmoid};
use crate::provider::{
    build_prompt, propose_validated, ChainView, Exchange, PromptConfig, PromptData, Provider, ValidCandidate,
};
use crate::regions::{Bound, Region};
use crate::tpe::{optimize, Dim, SearchSpace, Theta, TpeConfig, TrialLog};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Iteration cap.
    pub t_max: usize,
    pub success_target: usize,
    pub tau0: f64,
    pub tau_decay: f64,
    pub n_samples: usize,
    pub m_top: usize,
    pub max_repairs: usize,
    pub boundary_window: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            t_max: 12,
            success_target: 5,
            tau0: 0.002,
            tau_decay: 0.5,
            n_samples: 20,
            m_top: 8,
            max_repairs: 3,
            boundary_window: 0.1,
        }
    }
}

impl ChainConfig {
    /// Annealing tolerance at iteration `t` (1-based).
    pub fn tau(&self, t: usize) -> f64 {
        self.tau0 * self.tau_decay.powi(t as i32 - 1)
    }

    fn prompt(&self) -> PromptConfig {
        PromptConfig {
            n_samples: self.n_samples,
            m_top: self.m_top,
            boundary_window: self.boundary_window,
        }
    }
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("region {0} has no training rows")]
    EmptyRegion(usize),
    #[error("validation metric: {0}")]
    Metric(#[from] crate::metrics::MetricError),
    #[error("{what} has {got} rows, expected {expected}")]
    Length { what: &'static str, expected: usize, got: usize },
}

/// Shared read-only inputs for every chain of a run.
#[derive(Debug, Clone, Copy)]
pub struct ChainContext<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub train_logits: &'a [f64],
    pub val_logits: &'a [f64],
    pub train_proba: &'a [f64],
    pub stats: &'a FeatureStats,
    /// All selected regions, to keep refined boundaries from overlapping.
    pub regions: &'a [Region],
    pub legacy_val_auc: f64,
}

impl<'a> ChainContext<'a> {
    pub fn check(&self) -> Result<(), ChainError> {
        let pairs = [
            ("train logits", self.train.n_rows(), self.train_logits.len()),
            ("train probabilities", self.train.n_rows(), self.train_proba.len()),
            ("validation logits", self.val.n_rows(), self.val_logits.len()),
        ];
        for (what, expected, got) in pairs {
            if expected != got {
                return Err(ChainError::Length { what, expected, got });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub region: Region,
    pub seed: ExpertExpr,
    /// Validation AUC of the current seed.
    pub metric: f64,
    /// Completed iterations.
    pub t: usize,
    pub successes: usize,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub boundary_refined: bool,
    pub history: Vec<TranscriptEntry>,
}

/// One line of a chain transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub t: usize,
    pub candidate_text: Option<String>,
    pub intent: String,
    pub search_space: Vec<Dim>,
    pub theta_star: Option<Theta>,
    #[serde(rename = "A_t")]
    pub a_t: Option<f64>,
    pub tau: f64,
    pub accepted: bool,
    pub reason: String,
    pub boundary_slots: Vec<String>,
    pub trials: Option<TrialLog>,
    pub exchanges: Vec<Exchange>,
}

/// `if <region clauses> then p{c0=0} else 0`, with `c0` free.
pub fn init_seed(region: &Region, schema: &Arc<[String]>) -> ExpertExpr {
    let mut guard = Vec::new();
    for c in &region.clauses {
        if let Some(l) = c.lower {
            guard.push(GuardClause {
                feature: c.index,
                cmp: Cmp::Gt,
                rhs: Atom::Num(l),
            });
        }
        if let Some(u) = c.upper {
            guard.push(GuardClause {
                feature: c.index,
                cmp: Cmp::Le,
                rhs: Atom::Num(u),
            });
        }
    }
    ExpertExpr {
        guard,
        body: Node::Param(0),
        params: vec![ParamSlot {
            name: "c0".into(),
            value: 0.0,
            frozen: false,
            kind: ParamKind::Coefficient,
        }],
        schema: schema.clone(),
    }
}

/// The expert that is zero everywhere.
pub fn null_expert(region: &Region, schema: &Arc<[String]>) -> ExpertExpr {
    let mut e = init_seed(region, schema);
    e.body = Node::Num(0.0);
    e.reindex();
    e
}

/// Mean fused logloss over `rows` as a function of the free slots.
pub fn inner_objective<'a>(
    expr: &'a ExpertExpr,
    data: &'a Dataset,
    base_logits: &'a [f64],
    rows: &'a [usize],
) -> impl Fn(&Theta) -> f64 + 'a {
    move |theta| {
        let values = match expr.resolve(theta) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        let total: f64 = rows
            .iter()
            .map(|&i| {
                let z = base_logits[i] + expr.eval_values(data.x.row(i), &values);
                pointwise_logloss(data.target[i], sigmoid(z))
            })
            .sum();
        total / rows.len() as f64
    }
}

/// Validation AUC of `sigma(z_base + f)`. AUC is rank-based, so the
/// logits are scored directly.
pub fn fused_auc(expr: &ExpertExpr, values: &[f64], data: &Dataset, base_logits: &[f64]) -> Result<f64, ChainError> {
    let z: Vec<f64> = (0..data.n_rows())
        .map(|i| base_logits[i] + expr.eval_values(data.x.row(i), values))
        .collect();
    Ok(auc(&data.target, &z)?)
}

pub fn new_state(region: &Region, ctx: &ChainContext<'_>) -> Result<ChainState, ChainError> {
    ctx.check()?;
    if !(0..ctx.train.n_rows()).any(|i| region.contains(ctx.train.x.row(i))) {
        return Err(ChainError::EmptyRegion(region.id));
    }
    Ok(ChainState {
        region: region.clone(),
        seed: init_seed(region, &ctx.train.feature_names),
        metric: ctx.legacy_val_auc,
        t: 0,
        successes: 0,
        positive: Vec::new(),
        negative: Vec::new(),
        boundary_refined: false,
        history: Vec::new(),
    })
}

/// Deterministic per-(chain, iteration, purpose) seed.
fn mix(seed: u64, region: usize, t: usize, salt: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [region as u64, t as u64, salt] {
        h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// Turns each literal guard threshold into a boundary slot whose window is
/// `±window·IDR`, clipped so the guard never reaches into another region.
fn add_boundary_slots(
    expr: &mut ExpertExpr,
    space: &mut Vec<Dim>,
    region: &Region,
    ctx: &ChainContext<'_>,
    window: f64,
) -> Vec<String> {
    let names = expr.promote_guard_literals();
    let mut kept = Vec::new();
    for name in &names {
        let i = expr.param_index(name).expect("just promoted");
        let clause = expr
            .guard
            .iter()
            .find(|c| c.rhs == Atom::Param(i))
            .expect("promoted slot sits in the guard")
            .clone();
        let v = expr.params[i].value;
        let half = window * ctx.stats.features[clause.feature].interdecile_range();
        let (mut lo, mut hi) = (v - half, v + half);
        if clause.cmp.is_lower_bound() {
            if let Some(limit) = region.outward_limit(clause.feature, Bound::Lower, ctx.regions) {
                lo = lo.max(limit);
            }
        } else if let Some(limit) = region.outward_limit(clause.feature, Bound::Upper, ctx.regions) {
            hi = hi.min(limit);
        }
        if hi - lo > 1e-12 && half > 0.0 {
            space.push(Dim::linear(name, lo, hi));
            kept.push(name.clone());
        } else {
            expr.params[i].frozen = true;
        }
    }
    kept
}

/// Slot values that make every tunable guard bound as loose as its window
/// allows.
fn widest_values(expr: &ExpertExpr, space: &[Dim]) -> Vec<f64> {
    let mut values = expr.values();
    for c in &expr.guard {
        if let Atom::Param(i) = c.rhs {
            if let Some(d) = space.iter().find(|d| d.name == expr.params[i].name) {
                values[i] = if c.cmp.is_lower_bound() { d.lower } else { d.upper };
            }
        }
    }
    values
}

struct Tuned {
    expr: ExpertExpr,
    theta: Theta,
    a_t: f64,
    log: TrialLog,
}

fn tune(
    expr: &ExpertExpr,
    space: &[Dim],
    region_id: usize,
    ctx: &ChainContext<'_>,
    tpe: &TpeConfig,
    t: usize,
) -> Result<Tuned, String> {
    let widest = widest_values(expr, space);
    let rows: Vec<usize> = (0..ctx.train.n_rows())
        .filter(|&i| expr.guard_holds(ctx.train.x.row(i), &widest))
        .collect();
    if rows.is_empty() {
        return Err("guard selects no training rows".into());
    }
    let frozen: Theta = expr
        .params
        .iter()
        .filter(|p| !space.iter().any(|d| d.name == p.name))
        .map(|p| (p.name.clone(), p.value))
        .collect();
    let search = SearchSpace::new(space.to_vec(), frozen).map_err(|e| format!("search space: {e}"))?;
    let cfg = TpeConfig {
        seed: mix(tpe.seed, region_id, t, 2),
        ..tpe.clone()
    };
    let objective = inner_objective(expr, ctx.train, ctx.train_logits, &rows);
    let result = optimize(objective, &search, &cfg).map_err(|e| format!("optimizer: {e}"))?;
    let values = expr.resolve(&result.theta).map_err(|e| e.to_string())?;
    let tuned = expr.with_values(&values);
    let a_t = fused_auc(&tuned, &values, ctx.val, ctx.val_logits).map_err(|e| e.to_string())?;
    Ok(Tuned {
        expr: tuned,
        theta: result.theta,
        a_t,
        log: result.log,
    })
}

/// Annealed acceptance: strictly better than `previous - tau`.
pub fn accepts(a_t: f64, previous: f64, tau: f64) -> bool {
    a_t > previous - tau
}

/// One propose, tune, evaluate, accept step.
pub fn run_iteration(
    state: &mut ChainState,
    provider: &mut dyn Provider,
    ctx: &ChainContext<'_>,
    config: &ChainConfig,
    tpe: &TpeConfig,
) {
    let t = state.t + 1;
    let tau = config.tau(t);
    let mut entry = TranscriptEntry {
        t,
        candidate_text: None,
        intent: String::new(),
        search_space: Vec::new(),
        theta_star: None,
        a_t: None,
        tau,
        accepted: false,
        reason: String::new(),
        boundary_slots: Vec::new(),
        trials: None,
        exchanges: Vec::new(),
    };
    let prompt = build_prompt(
        ChainView {
            region: &state.region,
            seed: &state.seed,
            metric: state.metric,
            iteration: t,
            positive: &state.positive,
            negative: &state.negative,
        },
        PromptData {
            train: ctx.train,
            base_proba: ctx.train_proba,
            stats: ctx.stats,
        },
        &config.prompt(),
        mix(tpe.seed, state.region.id, t, 0),
    );
    let outcome = match prompt {
        Err(e) => Err((format!("prompt: {e}"), String::new())),
        Ok(prompt) => {
            let proposal = propose_validated(provider, &prompt, config.max_repairs, mix(tpe.seed, state.region.id, t, 1));
            entry.exchanges = proposal.exchanges;
            proposal
                .result
                .map_err(|f| (format!("{} error: {}", f.category, f.message), f.intent))
        }
    };

    let reject = |state: &mut ChainState, mut entry: TranscriptEntry, reason: String, summary: String| {
        entry.reason = reason;
        if !summary.is_empty() {
            state.negative.push(summary);
        }
        state.history.push(entry);
        state.t = t;
    };

    let ValidCandidate { mut expr, mut space, intent } = match outcome {
        Ok(v) => v,
        Err((reason, intent)) => {
            entry.intent = intent.clone();
            let summary = if intent.is_empty() { String::new() } else { format!("{intent} (invalid)") };
            return reject(state, entry, reason, summary);
        }
    };
    entry.intent = intent.clone();
    if !state.boundary_refined {
        entry.boundary_slots = add_boundary_slots(&mut expr, &mut space, &state.region, ctx, config.boundary_window);
    }
    entry.candidate_text = Some(expr.serialize());
    entry.search_space = space.clone();

    let tuned = match tune(&expr, &space, state.region.id, ctx, tpe, t) {
        Ok(x) => x,
        Err(reason) => return reject(state, entry, reason, intent),
    };
    entry.theta_star = Some(tuned.theta);
    entry.a_t = Some(tuned.a_t);
    entry.trials = Some(tuned.log);

    if accepts(tuned.a_t, state.metric, tau) {
        entry.accepted = true;
        entry.reason = format!("A_t {:.6} > {:.6} - {}", tuned.a_t, state.metric, tau);
        let mut seed = tuned.expr;
        seed.freeze_all();
        state.seed = seed;
        state.metric = tuned.a_t;
        state.successes += 1;
        state.positive.push(intent);
        if !entry.boundary_slots.is_empty() {
            state.boundary_refined = true;
        }
        state.history.push(entry);
        state.t = t;
    } else {
        let reason = format!("A_t {:.6} <= {:.6} - {}", tuned.a_t, state.metric, tau);
        reject(state, entry, reason, intent);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub t: usize,
    pub intent: String,
    pub accepted: bool,
    #[serde(rename = "A_t")]
    pub a_t: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertMetrics {
    pub legacy_auc: f64,
    /// A_0 followed by the seed metric after each iteration.
    pub a_series: Vec<f64>,
    pub final_auc: f64,
}

/// Result of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertArtifact {
    pub region_id: usize,
    pub region: Region,
    pub dsl_text: String,
    pub params: BTreeMap<String, f64>,
    pub null: bool,
    pub successes: usize,
    pub iterations: usize,
    pub boundary_refined: bool,
    pub history: Vec<HistoryItem>,
    pub metrics: ExpertMetrics,
}

impl ExpertArtifact {
    /// Parses the stored expression against `schema`.
    pub fn expr(&self, schema: &Arc<[String]>) -> Result<ExpertExpr, crate::expr::ParseError> {
        crate::expr::parse(&self.dsl_text, schema)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutcome {
    pub artifact: ExpertArtifact,
    pub transcript: Vec<TranscriptEntry>,
}

pub fn run_chain(
    region: &Region,
    provider: &mut dyn Provider,
    ctx: &ChainContext<'_>,
    config: &ChainConfig,
    tpe: &TpeConfig,
) -> Result<ChainOutcome, ChainError> {
    let mut state = new_state(region, ctx)?;
    let mut series = vec![state.metric];
    while state.successes < config.success_target && state.t < config.t_max {
        run_iteration(&mut state, provider, ctx, config, tpe);
        series.push(state.metric);
        log::debug!(
            "region {} t={} metric={:.6} successes={}",
            region.id,
            state.t,
            state.metric,
            state.successes
        );
    }
    let null = state.successes == 0 || state.metric < ctx.legacy_val_auc;
    let expr = if null {
        null_expert(region, &ctx.train.feature_names)
    } else {
        state.seed.clone()
    };
    let artifact = ExpertArtifact {
        region_id: region.id,
        region: region.clone(),
        dsl_text: expr.serialize(),
        params: expr.params.iter().map(|p| (p.name.clone(), p.value)).collect(),
        null,
        successes: state.successes,
        iterations: state.t,
        boundary_refined: state.boundary_refined,
        history: state
            .history
            .iter()
            .map(|e| HistoryItem {
                t: e.t,
                intent: e.intent.clone(),
                accepted: e.accepted,
                a_t: e.a_t,
                reason: e.reason.clone(),
            })
            .collect(),
        metrics: ExpertMetrics {
            legacy_auc: ctx.legacy_val_auc,
            a_series: series,
            final_auc: if null { ctx.legacy_val_auc } else { state.metric },
        },
    };
    Ok(ChainOutcome {
        artifact,
        transcript: state.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{feature_stats, from_rows, split};
    use crate::expr::parse;
    use crate::provider::MockProvider;
    use crate::regions::Clause;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Task {
        train: Dataset,
        val: Dataset,
        train_logits: Vec<f64>,
        val_logits: Vec<f64>,
        train_proba: Vec<f64>,
        stats: FeatureStats,
        region: Region,
        legacy_auc: f64,
    }

    impl Task {
        fn ctx(&self) -> ChainContext<'_> {
            ChainContext {
                train: &self.train,
                val: &self.val,
                train_logits: &self.train_logits,
                val_logits: &self.val_logits,
                train_proba: &self.train_proba,
                stats: &self.stats,
                regions: std::slice::from_ref(&self.region),
                legacy_val_auc: self.legacy_auc,
            }
        }
    }

    /// Legacy knows `2*x1`; inside x3 > 0.5 the truth adds `3*(x2 - 0.5)`.
    fn task(n: usize) -> Task {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|r| {
                let z = 2.0 * (r[0] - 0.5) + if r[2] > 0.5 { 3.0 * (r[1] - 0.5) } else { 0.0 };
                u8::from(rng.gen::<f64>() < sigmoid(z))
            })
            .collect();
        let data = from_rows(&rows, y, None).unwrap();
        let (train, val) = split(&data, 0.8, 3).unwrap();
        let legacy = |d: &Dataset| (0..d.n_rows()).map(|i| 2.0 * (d.x.get(i, 0) - 0.5)).collect::<Vec<_>>();
        let train_logits = legacy(&train);
        let val_logits = legacy(&val);
        let legacy_auc = auc(&val.target, &val_logits).unwrap();
        Task {
            train_proba: train_logits.iter().map(|&z| sigmoid(z)).collect(),
            stats: feature_stats(&train, &val).unwrap(),
            region: Region {
                id: 0,
                clauses: vec![Clause {
                    feature: "x3".into(),
                    index: 2,
                    lower: Some(0.5),
                    upper: None,
                }],
                priority: 1.0,
                coverage: 0,
                cum_error: 0.0,
                leaf: 0,
            },
            train,
            val,
            train_logits,
            val_logits,
            legacy_auc,
        }
    }

    fn run(task: &Task, provider: &mut dyn Provider, config: &ChainConfig) -> ChainOutcome {
        let tpe = TpeConfig { m: 40, seed: 4, ..Default::default() };
        run_chain(&task.region, provider, &task.ctx(), config, &tpe).unwrap()
    }

    #[test]
    fn seed_template() {
        let region = Region {
            id: 0,
            clauses: vec![Clause { feature: "x3".into(), index: 2, lower: Some(0.6), upper: None }],
            priority: 1.0,
            coverage: 1,
            cum_error: 0.0,
            leaf: 0,
        };
        let schema: Arc<[String]> = ["x1", "x2", "x3"].map(String::from).into();
        let seed = init_seed(&region, &schema);
        assert_eq!(seed.serialize(), "if `x3` > 0.6 then p{c0=0} else 0");
        assert_eq!(seed.eval_values(&[0.0, 0.0, 0.5], &[2.0]), 0.0);
        assert_eq!(seed.eval_values(&[0.0, 0.0, 0.9], &[0.0]), 0.0);
        assert_eq!(seed.eval_values(&[0.0, 0.0, 0.9], &[2.0]), 2.0);
        assert!(null_expert(&region, &schema).is_null());
    }

    #[test]
    fn objective_identity_and_hand_value() {
        let t = task(400);
        let seed = init_seed(&t.region, &t.train.feature_names);
        let rows: Vec<usize> = (0..t.train.n_rows()).filter(|&i| t.region.contains(t.train.x.row(i))).collect();
        let f = inner_objective(&seed, &t.train, &t.train_logits, &rows);
        let legacy: f64 = rows
            .iter()
            .map(|&i| pointwise_logloss(t.train.target[i], sigmoid(t.train_logits[i])))
            .sum::<f64>()
            / rows.len() as f64;
        let zero: Theta = [("c0".to_string(), 0.0)].into();
        assert_eq!(f(&zero), legacy);

        let one = from_rows(&[vec![0.0, 0.0, 0.9]], vec![1], None).unwrap();
        let g = inner_objective(&seed, &one, &[0.0], &[0]);
        let three: Theta = [("c0".to_string(), 3.0)].into();
        // -ln(sigmoid(3)) = ln(1 + e^-3)
        assert!((g(&three) - (1.0 + (-3f64).exp()).ln()).abs() < 1e-12);
        assert!((g(&three) - 0.048587).abs() < 1e-6);
        assert!(g(&three) < g(&zero));
    }

    #[test]
    fn tau_schedule_and_rule() {
        let c = ChainConfig::default();
        assert_eq!([c.tau(1), c.tau(2), c.tau(3)], [0.002, 0.001, 0.0005]);
        assert!(accepts(0.700, 0.701, 0.002));
        assert!(!accepts(0.701 - 0.002, 0.701, 0.002));
        assert!(!accepts(0.5, 0.5, 0.0));
    }

    #[test]
    fn useless_provider_gives_null_expert() {
        let t = task(400);
        let config = ChainConfig { t_max: 4, ..Default::default() };
        let out = run(&t, &mut MockProvider::useless(), &config);
        assert!(out.artifact.null);
        assert_eq!(out.artifact.iterations, 4);
        assert_eq!(out.transcript.len(), 4);
        assert!(out.transcript.iter().all(|e| !e.accepted && e.a_t.is_none()));
        let e = out.artifact.expr(&t.train.feature_names).unwrap();
        assert!(e.is_null());
        assert_eq!(out.artifact.metrics.final_auc, t.legacy_auc);
    }

    #[test]
    fn mock_improves_on_planted_signal() {
        let t = task(3000);
        let out = run(&t, &mut MockProvider::new(), &ChainConfig::default());
        let a = &out.artifact;
        assert!(!a.null);
        assert!(a.metrics.final_auc > t.legacy_auc + 0.01, "{} vs {}", a.metrics.final_auc, t.legacy_auc);
        assert!(a.boundary_refined);
        // the x3 boundary moved at most one window
        let e = a.expr(&t.train.feature_names).unwrap();
        let x3 = e.guard.iter().find(|c| c.feature == 2).unwrap();
        let v = match x3.rhs {
            Atom::Num(v) => v,
            Atom::Param(i) => e.params[i].value,
        };
        assert!((v - 0.5).abs() <= 0.1 * t.stats.features[2].interdecile_range() + 1e-12);
    }

    #[test]
    fn stops_at_success_target() {
        let t = task(3000);
        let config = ChainConfig { success_target: 2, ..Default::default() };
        let out = run(&t, &mut MockProvider::new(), &config);
        assert_eq!(out.artifact.successes, 2);
        assert!(out.transcript.last().unwrap().accepted);
        assert_eq!(out.transcript.iter().filter(|e| e.accepted).count(), 2);
    }

    #[test]
    fn chain_invariants() {
        let t = task(2000);
        let out = run(&t, &mut MockProvider::new(), &ChainConfig::default());
        let a0 = t.legacy_auc;
        let accepted: Vec<&TranscriptEntry> = out.transcript.iter().filter(|e| e.accepted).collect();
        let floor = accepted.iter().filter_map(|e| e.a_t).fold(f64::INFINITY, f64::min);
        assert!(floor >= a0 - 2.0 * 0.002);
        assert_eq!(out.artifact.history.len(), out.artifact.iterations);
        // inherited slots never reappear in a later search space
        let mut inherited: Vec<String> = Vec::new();
        for e in &out.transcript {
            for d in &e.search_space {
                assert!(!inherited.contains(&d.name), "{} re-tuned at t={}", d.name, e.t);
            }
            if e.accepted {
                let expr = parse(e.candidate_text.as_ref().unwrap(), &t.train.feature_names).unwrap();
                inherited = expr.params.iter().map(|p| p.name.clone()).collect();
            }
            if let Some(trials) = &e.trials {
                // frozen slots hold their value in every trial
                let expr = parse(e.candidate_text.as_ref().unwrap(), &t.train.feature_names).unwrap();
                for p in expr.params.iter().filter(|p| !e.search_space.iter().any(|d| d.name == p.name)) {
                    assert!(trials.trials.iter().all(|tr| tr.theta[&p.name] == p.value));
                }
            }
        }
        // zero outside the widened region box
        let e = out.artifact.expr(&t.train.feature_names).unwrap();
        let w = 0.1 * t.stats.features[2].interdecile_range();
        let values = e.values();
        for i in 0..t.train.n_rows() {
            let row = t.train.x.row(i);
            if row[2] <= 0.5 - w {
                assert_eq!(e.eval_values(row, &values), 0.0);
            }
        }
    }

    #[test]
    fn reproducible() {
        let t = task(1000);
        let a = run(&t, &mut MockProvider::new(), &ChainConfig::default());
        let b = run(&t, &mut MockProvider::new(), &ChainConfig::default());
        assert_eq!(serde_json::to_string(&a.artifact).unwrap(), serde_json::to_string(&b.artifact).unwrap());
        assert_eq!(serde_json::to_string(&a.transcript).unwrap(), serde_json::to_string(&b.transcript).unwrap());
    }
}
