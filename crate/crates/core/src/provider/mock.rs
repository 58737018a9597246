//! Offline provider driven by the prompt's residual statistics.

use super::{CandidateExpert, PromptBundle, Provider, ProviderError};
use crate::expr::{Atom, BinOp, Cmp, ExpertExpr, Func, GuardClause, Node, ParamKind, ParamSlot, OUTPUT_CLIP};
use crate::tpe::Dim;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic stand-in for a language model. Each proposal applies one
/// mutation to the seed: a linear, product, bump or step term on a
/// feature that correlates with the residual, a new guard bound on such a
/// feature, a tighter existing bound, or a rescaled body. Mutations listed as failed in the prompt are skipped.
#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    useless: bool,
}

impl MockProvider {
    pub fn new() -> Self {
        MockProvider { useless: false }
    }

    /// Replies with text that never parses.
    pub fn useless() -> Self {
        MockProvider { useless: true }
    }
}

#[derive(Debug, Clone, Copy)]
enum Mutation {
    Linear(usize),
    Product(usize, usize),
    Gauss(usize),
    Step(usize),
    Tighten(usize),
    Restrict(usize, bool),
    Rescale,
}

#[derive(Clone)]
struct Choice {
    mutation: Mutation,
    intent: String,
    weight: f64,
}

fn options(p: &PromptBundle) -> Vec<Choice> {
    let names = p.schema();
    // Sharpened toward the strongest signal, the way a low-temperature
    // sampler concentrates on its top reading of the statistics.
    let top = p
        .single_signals
        .iter()
        .chain(&p.pair_signals)
        .map(|s| s.corr.abs())
        .fold(1e-9, f64::max);
    let strength = |corr: f64| (corr.abs() / top).powi(3) + 0.005;
    let mut out = Vec::new();
    for s in &p.single_signals {
        let j = s.features[0];
        let w = strength(s.corr);
        out.push(Choice {
            mutation: Mutation::Linear(j),
            intent: format!("add linear term {}", names[j]),
            weight: w,
        });
        out.push(Choice {
            mutation: Mutation::Gauss(j),
            intent: format!("add gauss bump on {}", names[j]),
            weight: 0.5 * w,
        });
        out.push(Choice {
            mutation: Mutation::Step(j),
            intent: format!("add tanh step on {}", names[j]),
            weight: 0.5 * w,
        });
        for upper in [true, false] {
            let bounded = p
                .seed
                .guard
                .iter()
                .any(|c| c.feature == j && c.cmp.is_lower_bound() == upper);
            if !bounded {
                out.push(Choice {
                    mutation: Mutation::Restrict(j, upper),
                    intent: format!("restrict guard to {} {}", names[j], if upper { "above a cut" } else { "below a cut" }),
                    weight: 0.5 * w,
                });
            }
        }
    }
    for s in &p.pair_signals {
        let (a, b) = (s.features[0], s.features[1]);
        out.push(Choice {
            mutation: Mutation::Product(a, b),
            intent: format!("add product term {}*{}", names[a], names[b]),
            weight: strength(s.corr),
        });
    }
    for (k, c) in p.seed.guard.iter().enumerate() {
        out.push(Choice {
            mutation: Mutation::Tighten(k),
            intent: format!("tighten guard on {}", names[c.feature]),
            weight: 0.1,
        });
    }
    if !p.seed.is_null() {
        out.push(Choice {
            mutation: Mutation::Rescale,
            intent: "rescale body".into(),
            weight: 0.05,
        });
    }
    out
}

fn pick(p: &PromptBundle, seed: u64, avoid: &[&str]) -> Option<Choice> {
    let all = options(p);
    let used = |o: &Choice| {
        p.negative.iter().chain(&p.positive).any(|s| *s == o.intent) || avoid.contains(&o.intent.as_str())
    };
    let fresh: Vec<Choice> = all.iter().filter(|o| !used(o)).cloned().collect();
    let pool = if fresh.is_empty() { all } else { fresh };
    if pool.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = WeightedIndex::new(pool.iter().map(|o| o.weight)).ok()?;
    let k = dist.sample(&mut rng);
    pool.into_iter().nth(k)
}

struct Builder {
    expr: ExpertExpr,
    space: Vec<Dim>,
}

impl Builder {
    fn slot(&mut self, prefix: &str, value: f64, kind: ParamKind, dim: Dim) -> Node {
        let name = self.expr.fresh_name(prefix);
        self.expr.params.push(ParamSlot {
            name: name.clone(),
            value,
            frozen: false,
            kind,
        });
        self.space.push(Dim { name, ..dim });
        Node::Param(self.expr.params.len() - 1)
    }

    fn coef(&mut self, half_range: f64) -> Node {
        let r = half_range.clamp(1e-3, 1e6);
        self.slot("c", 0.0, ParamKind::Coefficient, Dim::linear("", -r, r))
    }

    fn add_term(&mut self, term: Node) {
        let body = std::mem::replace(&mut self.expr.body, Node::Num(0.0));
        self.expr.body = if matches!(body, Node::Num(v) if v == 0.0) {
            term
        } else {
            Node::bin(BinOp::Add, body, term)
        };
    }
}

fn apply(p: &PromptBundle, m: Mutation) -> (ExpertExpr, Vec<Dim>) {
    let mut b = Builder { expr: p.seed.clone(), space: Vec::new() };
    let half = |j: usize| {
        let q = p.region_quantiles[j];
        ((q[2] - q[0]) / 2.0).max(1e-6)
    };
    let width = |j: usize| {
        let idr = p.interdecile[j];
        if idr > 1e-9 {
            idr
        } else {
            half(j) * 2.0
        }
    };
    match m {
        Mutation::Linear(j) => {
            let c = b.coef(OUTPUT_CLIP / half(j));
            let centered = Node::bin(BinOp::Sub, Node::Feature(j), Node::Num(p.region_quantiles[j][1]));
            let off = b.coef(1.0);
            b.add_term(Node::bin(BinOp::Add, Node::bin(BinOp::Mul, c, centered), off));
        }
        Mutation::Product(a, c) => {
            let s = p
                .pair_signals
                .iter()
                .find(|s| s.features == [a, c])
                .map(|s| (s.mean, s.spread.max(1e-6)))
                .unwrap_or((0.0, 1.0));
            let k = b.coef(OUTPUT_CLIP / s.1);
            let prod = Node::bin(BinOp::Mul, Node::Feature(a), Node::Feature(c));
            b.add_term(Node::bin(BinOp::Mul, k, Node::bin(BinOp::Sub, prod, Node::Num(s.0))));
        }
        Mutation::Gauss(j) | Mutation::Step(j) => {
            let q = p.region_quantiles[j];
            let (lo, hi) = if q[2] > q[0] { (q[0], q[2]) } else { (q[1] - 0.5, q[1] + 0.5) };
            let k = b.coef(OUTPUT_CLIP);
            let mu = b.slot("m", q[1], ParamKind::Coefficient, Dim::linear("", lo, hi));
            let w = width(j);
            let s = b.slot("s", w / 4.0, ParamKind::Coefficient, Dim::log("", w / 20.0, w));
            let shape = match m {
                Mutation::Gauss(_) => Node::call(Func::Gauss, vec![Node::Feature(j), mu, s]),
                _ => Node::call(
                    Func::Tanh,
                    vec![Node::bin(BinOp::Div, Node::bin(BinOp::Sub, Node::Feature(j), mu), s)],
                ),
            };
            b.add_term(Node::bin(BinOp::Mul, k, shape));
        }
        Mutation::Tighten(k) => {
            let clause = b.expr.guard[k].clone();
            let v = match clause.rhs {
                Atom::Num(v) => v,
                Atom::Param(i) => b.expr.params[i].value,
            };
            let step = p.boundary_window * width(clause.feature);
            let dim = if clause.cmp.is_lower_bound() {
                Dim::linear("", v, v + step)
            } else {
                Dim::linear("", v - step, v)
            };
            let slot = b.slot("b", v, ParamKind::Boundary, dim);
            let Node::Param(i) = slot else { unreachable!() };
            b.expr.guard[k].rhs = Atom::Param(i);
        }
        Mutation::Restrict(j, upper) => {
            let q = p.region_quantiles[j];
            let (lo, hi) = if q[2] > q[0] { (q[0], q[2]) } else { (q[1] - 0.5, q[1] + 0.5) };
            let slot = b.slot("b", q[1], ParamKind::Boundary, Dim::linear("", lo, hi));
            let Node::Param(i) = slot else { unreachable!() };
            b.expr.guard.push(GuardClause {
                feature: j,
                cmp: if upper { Cmp::Gt } else { Cmp::Le },
                rhs: Atom::Param(i),
            });
        }
        Mutation::Rescale => {
            let g = b.slot("g", 1.0, ParamKind::Coefficient, Dim::log("", 0.25, 4.0));
            let body = std::mem::replace(&mut b.expr.body, Node::Num(0.0));
            b.expr.body = Node::bin(BinOp::Mul, g, body);
        }
    }
    b.expr.reindex();
    (b.expr, b.space)
}

fn render(expr: &ExpertExpr, intent: &str, space: &[Dim]) -> CandidateExpert {
    let dsl_text = expr.serialize();
    let space_json = serde_json::to_string(space).expect("dims serialize");
    CandidateExpert {
        raw: format!("```\n{dsl_text}\n```\nINTENT: {intent}\nSEARCH_SPACE: {space_json}\n"),
        dsl_text,
        intent: intent.to_string(),
        search_space: space.to_vec(),
    }
}

fn garbage(attempt: usize) -> CandidateExpert {
    let raw = format!("I would add a correction here (attempt {attempt}). if then else");
    CandidateExpert {
        dsl_text: "if then else".into(),
        intent: "unusable".into(),
        search_space: Vec::new(),
        raw,
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        if self.useless {
            "mock-useless"
        } else {
            "mock"
        }
    }

    fn propose(&mut self, prompt: &PromptBundle, seed: u64) -> Result<CandidateExpert, ProviderError> {
        if self.useless {
            return Ok(garbage(0));
        }
        let Some(o) = pick(prompt, seed, &[]) else {
            return Ok(garbage(0));
        };
        let (expr, space) = apply(prompt, o.mutation);
        Ok(render(&expr, &o.intent, &space))
    }

    fn repair(
        &mut self,
        prompt: &PromptBundle,
        candidate: &CandidateExpert,
        _report: &str,
        attempt: usize,
    ) -> Result<CandidateExpert, ProviderError> {
        if self.useless {
            return Ok(garbage(attempt));
        }
        let seed = 0x9e37_79b9_u64.wrapping_mul(attempt as u64 + 1);
        let Some(o) = pick(prompt, seed, &[candidate.intent.as_str()]) else {
            return Ok(garbage(attempt));
        };
        let (expr, space) = apply(prompt, o.mutation);
        Ok(render(&expr, &o.intent, &space))
    }
}
