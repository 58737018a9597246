//! Candidate generation for the outer loop.
//!
//! [`build_prompt`] turns a chain's state into a [`PromptBundle`]: a task
//! header, the region rule, the current expert with its metric, feature
//! statistics, tagged sample rows and the accepted/rejected history. A
//! [`Provider`] answers with a [`CandidateExpert`], which
//! [`propose_validated`] parses and checks, sending error reports back
//! through [`Provider::repair`] up to `max_repairs` times.

mod llm;
mod mock;

pub use llm::{parse_response, LlmConfig, LlmProvider};
pub use mock::MockProvider;

use crate::dataset::{quantile_sorted, Dataset, FeatureStats};
use crate::expr::{parse, Atom, Cmp, ExpertExpr, ParseError, ParseErrorKind, OUTPUT_CLIP};
use crate::regions::Region;
use crate::tpe::{Dim, Scale};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::sync::Arc;
use thiserror::Error;

/// Half-width of the uncertainty band around 0.5.
pub const UNCERTAINTY_BAND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorTag {
    FalseNeg,
    FalsePos,
    HighUncertainty,
    ConfidentOk,
}

impl ErrorTag {
    pub const ALL: [ErrorTag; 4] = [
        ErrorTag::FalseNeg,
        ErrorTag::FalsePos,
        ErrorTag::HighUncertainty,
        ErrorTag::ConfidentOk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorTag::FalseNeg => "FALSE_NEG",
            ErrorTag::FalsePos => "FALSE_POS",
            ErrorTag::HighUncertainty => "HIGH_UNCERTAINTY",
            ErrorTag::ConfidentOk => "CONFIDENT_OK",
        }
    }
}

impl fmt::Display for ErrorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The uncertainty band wins over misclassification.
pub fn error_tag(label: u8, proba: f64) -> ErrorTag {
    if (proba - 0.5).abs() <= UNCERTAINTY_BAND {
        ErrorTag::HighUncertainty
    } else if label == 1 && proba < 0.5 {
        ErrorTag::FalseNeg
    } else if label == 0 && proba >= 0.5 {
        ErrorTag::FalsePos
    } else {
        ErrorTag::ConfidentOk
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("region has no training rows")]
    EmptyRegion,
    #[error("transport: {0}")]
    Transport(String),
    #[error("{message}")]
    Extraction { message: String, raw: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("repair attempt {attempt} exceeds the limit of {limit}")]
    RetriesExhausted { attempt: usize, limit: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub n_samples: usize,
    pub m_top: usize,
    /// Boundary window as a fraction of a feature's interdecile range.
    pub boundary_window: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            n_samples: 20,
            m_top: 8,
            boundary_window: 0.1,
        }
    }
}

/// What the prompt needs to know about the chain.
#[derive(Debug, Clone, Copy)]
pub struct ChainView<'a> {
    pub region: &'a Region,
    pub seed: &'a ExpertExpr,
    pub metric: f64,
    pub iteration: usize,
    pub positive: &'a [String],
    pub negative: &'a [String],
}

/// Training split with frozen-model probabilities and feature statistics.
#[derive(Debug, Clone, Copy)]
pub struct PromptData<'a> {
    pub train: &'a Dataset,
    pub base_proba: &'a [f64],
    pub stats: &'a FeatureStats,
}

/// Correlation between a feature (or a product of two) and the residual
/// on the region's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSignal {
    pub features: Vec<usize>,
    pub corr: f64,
    pub mean: f64,
    /// Largest |value - mean| over the region rows.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLine {
    pub row: usize,
    pub label: u8,
    pub base_proba: f64,
    pub tag: ErrorTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub task_header: String,
    pub region_rule: String,
    pub seed_function: String,
    pub stats_block: String,
    pub samples_block: String,
    pub constraints_block: String,

    pub seed: ExpertExpr,
    pub metric: f64,
    pub iteration: usize,
    pub region_rows: usize,
    pub samples: Vec<SampleLine>,
    /// Feature indices by IV, best first, at most `m_top`.
    pub top_features: Vec<usize>,
    pub single_signals: Vec<ResidualSignal>,
    pub pair_signals: Vec<ResidualSignal>,
    /// Per feature: 10th, 50th and 90th percentile inside the region.
    pub region_quantiles: Vec<[f64; 3]>,
    /// Per feature: train interdecile range.
    pub interdecile: Vec<f64>,
    pub boundary_window: f64,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl PromptBundle {
    pub fn schema(&self) -> &Arc<[String]> {
        &self.seed.schema
    }

    /// The user message sent to a chat model.
    pub fn render(&self) -> String {
        [
            &self.region_rule,
            &self.seed_function,
            &self.stats_block,
            &self.samples_block,
            &self.constraints_block,
        ]
        .iter()
        .map(|s| s.as_str())
        .collect::<Vec<_>>()
        .join("\n")
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.len() < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 1e-300 || sbb <= 1e-300 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn signal(features: Vec<usize>, values: &[f64], resid: &[f64]) -> ResidualSignal {
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let spread = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    ResidualSignal {
        features,
        corr: pearson(values, resid),
        mean,
        spread,
    }
}

fn strongest(mut signals: Vec<ResidualSignal>, keep: usize) -> Vec<ResidualSignal> {
    // stable sort keeps index order among equal magnitudes
    signals.sort_by(|a, b| b.corr.abs().total_cmp(&a.corr.abs()));
    signals.truncate(keep);
    signals
}

fn fmt_num(v: f64) -> String {
    format!("{v:.4}")
}

const TASK_HEADER: &str = "\
You are improving a deployed binary classifier that cannot be retrained. \
Inside one region of the feature space its scores are often wrong. Write a \
correction expert for that region. The expert's value is added to the \
classifier's logit for rows where its guard holds and is 0 everywhere else, \
and it is clipped to [-3, 3].

Expression language:
  expert := if <guard> then <expr> else 0
  guard  := clause (and clause)*   where clause := `feature` (<|<=|>|>=) number-or-param
  expr   := numbers, `feature` names in backquotes, parameters, + - * /, unary -,
            exp log1p tanh sigmoid abs sqrt (1 arg), min max (2 args), gauss(u, mu, s) clip(x, lo, hi)
  param  := p{name=value} for a tunable constant, p{name=value,frozen} for a fixed one
Division, sqrt and log1p are protected, so any finite input is safe.

Rules: keep the guard at least as tight as the current expert's guard. Keep every \
existing parameter under its name and value; frozen ones stay frozen. Introduce new \
parameters for any constant you want tuned.

Reply with exactly:
1. one fenced code block containing the complete expert;
2. a line `INTENT: <one-line summary of the change>`;
3. a line `SEARCH_SPACE: <JSON array>` with one {\"name\", \"lower\", \"upper\", \"scale\"} \
object (scale is \"linear\" or \"log\") for every new parameter that is not frozen.";

/// Assembles the prompt for one outer-loop iteration. `seed` drives the
/// sample draw.
pub fn build_prompt(
    view: ChainView<'_>,
    data: PromptData<'_>,
    config: &PromptConfig,
    seed: u64,
) -> Result<PromptBundle, ProviderError> {
    let train = data.train;
    let rows: Vec<usize> = (0..train.n_rows())
        .filter(|&i| view.region.contains(train.x.row(i)))
        .collect();
    if rows.is_empty() {
        return Err(ProviderError::EmptyRegion);
    }
    let names = &train.feature_names;
    let d = train.n_features();

    // tag-stratified sample: shuffle each tag group, then take round-robin
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = ErrorTag::ALL
        .iter()
        .map(|&tag| {
            rows.iter()
                .copied()
                .filter(|&i| error_tag(train.target[i], data.base_proba[i]) == tag)
                .collect()
        })
        .collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    let want = config.n_samples.min(rows.len());
    let mut picked = Vec::with_capacity(want);
    let mut depth = 0;
    while picked.len() < want {
        for g in &groups {
            if picked.len() < want && depth < g.len() {
                picked.push(g[depth]);
            }
        }
        depth += 1;
    }
    picked.sort_unstable();
    let samples: Vec<SampleLine> = picked
        .iter()
        .map(|&i| SampleLine {
            row: i,
            label: train.target[i],
            base_proba: data.base_proba[i],
            tag: error_tag(train.target[i], data.base_proba[i]),
        })
        .collect();

    // residual signals inside the region
    let resid: Vec<f64> = rows
        .iter()
        .map(|&i| train.target[i] as f64 - data.base_proba[i])
        .collect();
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|j| rows.iter().map(|&i| train.x.get(i, j)).collect())
        .collect();
    let singles: Vec<ResidualSignal> = (0..d).map(|j| signal(vec![j], &columns[j], &resid)).collect();
    let mut pairs = Vec::with_capacity(d * d.saturating_sub(1) / 2);
    for a in 0..d {
        for b in a + 1..d {
            let prod: Vec<f64> = columns[a].iter().zip(&columns[b]).map(|(x, y)| x * y).collect();
            pairs.push(signal(vec![a, b], &prod, &resid));
        }
    }
    let single_signals = strongest(singles, config.m_top);
    let pair_signals = strongest(pairs, config.m_top);

    let region_quantiles: Vec<[f64; 3]> = columns
        .iter()
        .map(|c| {
            let mut s = c.clone();
            s.sort_by(f64::total_cmp);
            [quantile_sorted(&s, 0.1), quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.9)]
        })
        .collect();
    let interdecile: Vec<f64> = data.stats.features.iter().map(|f| f.interdecile_range()).collect();
    let mut top_features = data.stats.ranked_by_iv();
    top_features.truncate(config.m_top);

    let region_rule = format!(
        "REGION ({} training rows):\n  {}\n",
        rows.len(),
        if view.region.clauses.is_empty() {
            "all rows".to_string()
        } else {
            view.region.describe()
        }
    );
    let seed_function = format!(
        "CURRENT EXPERT (iteration {}, validation AUC with expert {}):\n```\n{}\n```\n",
        view.iteration,
        fmt_num(view.metric),
        view.seed.serialize()
    );

    let mut stats_block = String::from("FEATURES BY INFORMATION VALUE:\n");
    for &j in &top_features {
        let f = &data.stats.features[j];
        let drift = if f.psi > 0.25 {
            " [unstable]"
        } else if f.psi > 0.1 {
            " [shifting]"
        } else {
            ""
        };
        let q = region_quantiles[j];
        let _ = writeln!(
            stats_block,
            "  {}: iv={} psi={}{} train range [{}, {}] region p10/p50/p90 {}/{}/{}",
            f.name,
            fmt_num(f.iv),
            fmt_num(f.psi),
            drift,
            fmt_num(f.min),
            fmt_num(f.max),
            fmt_num(q[0]),
            fmt_num(q[1]),
            fmt_num(q[2]),
        );
    }
    stats_block.push_str("RESIDUAL CORRELATIONS IN REGION (residual = label - score):\n");
    for s in single_signals.iter().chain(&pair_signals) {
        let label: Vec<&str> = s.features.iter().map(|&j| names[j].as_str()).collect();
        let _ = writeln!(stats_block, "  corr({}, r) = {}", label.join("*"), fmt_num(s.corr));
    }

    let mut samples_block = format!("SAMPLES ({} rows from the region):\n", samples.len());
    for s in &samples {
        let values: Vec<String> = names
            .iter()
            .zip(train.x.row(s.row))
            .map(|(n, v)| format!("{n}={}", fmt_num(*v)))
            .collect();
        let _ = writeln!(
            samples_block,
            "  [{}] y={} score={} {}",
            s.tag,
            s.label,
            fmt_num(s.base_proba),
            values.join(" ")
        );
    }

    let mut constraints_block = String::from("CHANGES THAT HELPED:\n");
    if view.positive.is_empty() {
        constraints_block.push_str("  (none yet)\n");
    }
    for p in view.positive {
        let _ = writeln!(constraints_block, "  + {p}");
    }
    constraints_block.push_str("CHANGES THAT FAILED (do not repeat):\n");
    if view.negative.is_empty() {
        constraints_block.push_str("  (none yet)\n");
    }
    for n in view.negative {
        let _ = writeln!(constraints_block, "  - {n}");
    }

    Ok(PromptBundle {
        task_header: TASK_HEADER.to_string(),
        region_rule,
        seed_function,
        stats_block,
        samples_block,
        constraints_block,
        seed: view.seed.clone(),
        metric: view.metric,
        iteration: view.iteration,
        region_rows: rows.len(),
        samples,
        top_features,
        single_signals,
        pair_signals,
        region_quantiles,
        interdecile,
        boundary_window: config.boundary_window,
        positive: view.positive.to_vec(),
        negative: view.negative.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateExpert {
    pub dsl_text: String,
    pub intent: String,
    pub search_space: Vec<Dim>,
    /// Raw provider response, kept for the transcript.
    pub raw: String,
}

pub trait Provider: Send {
    fn name(&self) -> &str;

    fn propose(&mut self, prompt: &PromptBundle, seed: u64) -> Result<CandidateExpert, ProviderError>;

    /// A new candidate after `candidate` failed with `report`. `attempt`
    /// counts from 1.
    fn repair(
        &mut self,
        prompt: &PromptBundle,
        candidate: &CandidateExpert,
        report: &str,
        attempt: usize,
    ) -> Result<CandidateExpert, ProviderError>;
}

/// Calls [`Provider::repair`] unless `attempt` is past the limit.
pub fn repair(
    provider: &mut dyn Provider,
    prompt: &PromptBundle,
    candidate: &CandidateExpert,
    report: &str,
    attempt: usize,
    limit: usize,
) -> Result<CandidateExpert, ProviderError> {
    if attempt > limit {
        return Err(ProviderError::RetriesExhausted { attempt, limit });
    }
    provider.repair(prompt, candidate, report, attempt)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("{0}")]
    Parse(ParseError),
    #[error("response format: {0}")]
    Format(String),
    #[error("search space names `{0}`, which is frozen or inherited; only new free parameters may be searched")]
    FrozenInSpace(String),
    #[error("search space names `{0}`, which does not appear in the expert")]
    UnknownInSpace(String),
    #[error("search space entry `{name}` is invalid: {reason}")]
    BadRange { name: String, reason: String },
    #[error("no search space declared for new parameter(s): {0}")]
    MissingSpace(String),
    #[error("guard must stay inside the current guard: {0}")]
    GuardEscapes(String),
}

impl ValidationError {
    /// Failure category for the transcript census.
    pub fn category(&self) -> &'static str {
        match self {
            ValidationError::Parse(e) => match e.kind {
                ParseErrorKind::UnknownFeature(_) => "unknown-feature",
                _ => "syntax",
            },
            ValidationError::Format(_) => "syntax",
            _ => "validation",
        }
    }
}

/// A candidate that parsed and passed every check, ready for tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidCandidate {
    pub expr: ExpertExpr,
    /// One entry per non-frozen slot of `expr`.
    pub space: Vec<Dim>,
    pub intent: String,
}

fn clause_value(e: &ExpertExpr, rhs: Atom) -> f64 {
    match rhs {
        Atom::Num(v) => v,
        Atom::Param(i) => e.params[i].value,
    }
}

/// Whether `{x : x cand_cmp cand_v}` lies inside `{x : x seed_cmp seed_v}`.
fn bound_within(seed_cmp: Cmp, seed_v: f64, cand_cmp: Cmp, cand_v: f64) -> bool {
    if seed_cmp.is_lower_bound() {
        cand_v > seed_v || (cand_v == seed_v && !(seed_cmp == Cmp::Gt && cand_cmp == Cmp::Ge))
    } else {
        cand_v < seed_v || (cand_v == seed_v && !(seed_cmp == Cmp::Lt && cand_cmp == Cmp::Le))
    }
}

/// Parses and checks a candidate against the chain's current seed.
///
/// Slots that share a name with a frozen seed slot are frozen at the seed's
/// value. Slots the seed still has free stay free and get a default range if
/// the candidate declares none. Every other non-frozen slot needs exactly one
/// search-space entry.
pub fn validate(candidate: &CandidateExpert, seed: &ExpertExpr) -> Result<ValidCandidate, ValidationError> {
    let mut expr = parse(&candidate.dsl_text, &seed.schema).map_err(ValidationError::Parse)?;
    let mut inherited_free = BTreeSet::new();
    for p in &mut expr.params {
        if let Some(s) = seed.params.iter().find(|s| s.name == p.name) {
            if s.frozen {
                p.frozen = true;
                p.value = s.value;
            } else if !p.frozen {
                inherited_free.insert(p.name.clone());
            }
        }
    }

    let mut declared = BTreeSet::new();
    for dim in &candidate.search_space {
        let Some(slot) = expr.params.iter().find(|p| p.name == dim.name) else {
            return Err(ValidationError::UnknownInSpace(dim.name.clone()));
        };
        if slot.frozen {
            return Err(ValidationError::FrozenInSpace(dim.name.clone()));
        }
        if !(dim.lower < dim.upper) || !dim.lower.is_finite() || !dim.upper.is_finite() {
            return Err(ValidationError::BadRange {
                name: dim.name.clone(),
                reason: format!("need finite lower < upper, got [{}, {}]", dim.lower, dim.upper),
            });
        }
        if dim.scale == Scale::Log && dim.lower <= 0.0 {
            return Err(ValidationError::BadRange {
                name: dim.name.clone(),
                reason: "log scale needs lower > 0".into(),
            });
        }
        if !declared.insert(dim.name.clone()) {
            return Err(ValidationError::BadRange {
                name: dim.name.clone(),
                reason: "declared twice".into(),
            });
        }
    }
    let missing: Vec<String> = expr
        .params
        .iter()
        .filter(|p| !p.frozen && !declared.contains(&p.name) && !inherited_free.contains(&p.name))
        .map(|p| p.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ValidationError::MissingSpace(missing.join(", ")));
    }

    // every seed bound must be matched by a bound at least as tight
    for sc in &seed.guard {
        let seed_v = clause_value(seed, sc.rhs);
        let same_side = |c: &&crate::expr::GuardClause| {
            c.feature == sc.feature && c.cmp.is_lower_bound() == sc.cmp.is_lower_bound()
        };
        let ok = expr.guard.iter().filter(same_side).any(|c| {
            let mut values = vec![clause_value(&expr, c.rhs)];
            if let Atom::Param(i) = c.rhs {
                if let Some(dim) = candidate.search_space.iter().find(|d| d.name == expr.params[i].name) {
                    values.push(dim.lower);
                    values.push(dim.upper);
                }
            }
            values.iter().all(|&v| bound_within(sc.cmp, seed_v, c.cmp, v))
        });
        if !ok {
            return Err(ValidationError::GuardEscapes(format!(
                "missing or looser bound `{}` {} {}",
                seed.schema[sc.feature],
                sc.cmp.symbol(),
                seed_v
            )));
        }
    }

    let mut space = Vec::new();
    for p in expr.params.iter().filter(|p| !p.frozen) {
        let dim = match candidate.search_space.iter().find(|d| d.name == p.name) {
            Some(d) => d.clone(),
            None => Dim::linear(&p.name, -OUTPUT_CLIP, OUTPUT_CLIP),
        };
        space.push(dim);
    }
    expr.reindex();
    Ok(ValidCandidate {
        expr,
        space,
        intent: candidate.intent.trim().to_string(),
    })
}

/// One provider round trip, for the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub kind: String,
    pub attempt: usize,
    pub response: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub category: String,
    pub message: String,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub result: Result<ValidCandidate, Failure>,
    pub exchanges: Vec<Exchange>,
}

/// Propose, validate, and repair up to `max_repairs` times.
pub fn propose_validated(
    provider: &mut dyn Provider,
    prompt: &PromptBundle,
    max_repairs: usize,
    seed: u64,
) -> Proposal {
    let mut exchanges = Vec::new();
    let mut candidate = match provider.propose(prompt, seed) {
        Ok(c) => c,
        Err(ProviderError::Extraction { message, raw }) => CandidateExpert {
            dsl_text: String::new(),
            intent: String::new(),
            search_space: Vec::new(),
            raw: format!("{raw}\n[extraction error: {message}]"),
        },
        Err(e) => {
            return Proposal {
                result: Err(Failure {
                    category: "transport".into(),
                    message: e.to_string(),
                    intent: String::new(),
                }),
                exchanges,
            }
        }
    };
    let mut attempt = 0;
    loop {
        let outcome = if candidate.dsl_text.is_empty() {
            Err(ValidationError::Format("no fenced code block with an expert".into()))
        } else {
            validate(&candidate, &prompt.seed)
        };
        exchanges.push(Exchange {
            kind: if attempt == 0 { "propose" } else { "repair" }.into(),
            attempt,
            response: candidate.raw.clone(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        });
        let err = match outcome {
            Ok(valid) => {
                return Proposal {
                    result: Ok(valid),
                    exchanges,
                }
            }
            Err(e) => e,
        };
        attempt += 1;
        let fail = |message: String| Failure {
            category: err.category().into(),
            message,
            intent: candidate.intent.clone(),
        };
        match repair(provider, prompt, &candidate, &err.to_string(), attempt, max_repairs) {
            Ok(next) => candidate = next,
            Err(ProviderError::Extraction { message, raw }) => {
                candidate = CandidateExpert {
                    dsl_text: String::new(),
                    intent: candidate.intent.clone(),
                    search_space: Vec::new(),
                    raw: format!("{raw}\n[extraction error: {message}]"),
                }
            }
            Err(ProviderError::RetriesExhausted { .. }) => {
                return Proposal {
                    result: Err(fail(err.to_string())),
                    exchanges,
                }
            }
            Err(e) => {
                return Proposal {
                    result: Err(Failure {
                        category: "transport".into(),
                        message: e.to_string(),
                        intent: candidate.intent.clone(),
                    }),
                    exchanges,
                }
            }
        }
    }
}

/// Which provider a chain uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Mock {
        /// Emit unusable candidates only (safety-floor testing).
        #[serde(default)]
        useless: bool,
    },
    Llm(LlmConfig),
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Mock { useless: false }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Box<dyn Provider>, ProviderError> {
        match self {
            ProviderConfig::Mock { useless } => Ok(Box::new(if *useless {
                MockProvider::useless()
            } else {
                MockProvider::new()
            })),
            ProviderConfig::Llm(cfg) => Ok(Box::new(LlmProvider::new(cfg.clone())?)),
        }
    }
}
