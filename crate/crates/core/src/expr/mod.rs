//! Guarded expert expressions.
//!
//! An expert is `if <guard> then <body> else 0`. The guard is a conjunction
//! of `feature cmp threshold` clauses (or `true`), the body is arithmetic
//! over features, literals, parameter slots and a small function set. Every
//! operator is protected, so evaluation is total, and the body value is
//! clipped to `[-OUTPUT_CLIP, OUTPUT_CLIP]`.

mod ast;
mod parse;

pub use ast::*;
pub use parse::{parse, ParseError, ParseErrorKind};

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;
use thiserror::Error;

/// Bound on a single expert's logit correction.
pub const OUTPUT_CLIP: f64 = 3.0;
/// Smallest divisor magnitude and gauss width.
pub const PROTECT_EPS: f64 = 1e-9;
const EXP_CAP: f64 = 50.0;
const VALUE_CAP: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("row has {got} features, expression schema has {expected}")]
    Schema { expected: usize, got: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

/// Renders a float so that parsing the text gives back the same bits.
pub fn render_number(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[inline]
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-VALUE_CAP, VALUE_CAP)
    }
}

#[inline]
fn protect(y: f64) -> f64 {
    if y < 0.0 {
        -y.abs().max(PROTECT_EPS)
    } else {
        y.max(PROTECT_EPS)
    }
}

fn eval_node(node: &Node, row: &[f64], theta: &[f64]) -> f64 {
    let v = match node {
        Node::Num(v) => *v,
        Node::Feature(j) => row[*j],
        Node::Param(i) => theta[*i],
        Node::Neg(a) => -eval_node(a, row, theta),
        Node::Bin(op, a, b) => {
            let x = eval_node(a, row, theta);
            let y = eval_node(b, row, theta);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / protect(y),
            }
        }
        Node::Call(f, args) => {
            let a = |k: usize| eval_node(&args[k], row, theta);
            match f {
                Func::Exp => a(0).min(EXP_CAP).exp(),
                Func::Log1p => a(0).abs().ln_1p(),
                Func::Tanh => a(0).tanh(),
                Func::Sigmoid => crate::metrics::sigmoid(a(0)),
                Func::Abs => a(0).abs(),
                Func::Sqrt => a(0).abs().sqrt(),
                Func::Min => a(0).min(a(1)),
                Func::Max => a(0).max(a(1)),
                Func::Gauss => {
                    let z = (a(0) - a(1)) / a(2).abs().max(PROTECT_EPS);
                    (-(z * z)).exp()
                }
                Func::Clip => {
                    let (x, p, q) = (a(0), a(1), a(2));
                    x.clamp(p.min(q), p.max(q))
                }
            }
        }
    };
    sanitize(v)
}

fn write_node(node: &Node, schema: &[String], params: &[ParamSlot], out: &mut String) {
    match node {
        Node::Num(v) => out.push_str(&render_number(*v)),
        Node::Feature(j) => {
            let _ = write!(out, "`{}`", schema[*j]);
        }
        Node::Param(i) => write_param(&params[*i], out),
        Node::Neg(a) => {
            out.push_str("-(");
            write_node(a, schema, params, out);
            out.push(')');
        }
        Node::Bin(op, a, b) => {
            out.push('(');
            write_node(a, schema, params, out);
            let _ = write!(out, " {} ", op.symbol());
            write_node(b, schema, params, out);
            out.push(')');
        }
        Node::Call(f, args) => {
            out.push_str(f.name());
            out.push('(');
            for (k, arg) in args.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_node(arg, schema, params, out);
            }
            out.push(')');
        }
    }
}

fn write_param(p: &ParamSlot, out: &mut String) {
    let _ = write!(out, "p{{{}={}", p.name, render_number(p.value));
    if p.frozen {
        out.push_str(",frozen");
    }
    out.push('}');
}

impl ExpertExpr {
    pub fn parse(text: &str, schema: &Arc<[String]>) -> Result<Self, ParseError> {
        parse(text, schema)
    }

    /// Canonical text form.
    pub fn serialize(&self) -> String {
        let mut out = String::from("if ");
        if self.guard.is_empty() {
            out.push_str("true");
        }
        for (k, c) in self.guard.iter().enumerate() {
            if k > 0 {
                out.push_str(" and ");
            }
            let _ = write!(out, "`{}` {} ", self.schema[c.feature], c.cmp.symbol());
            match c.rhs {
                Atom::Num(v) => out.push_str(&render_number(v)),
                Atom::Param(i) => write_param(&self.params[i], &mut out),
            }
        }
        out.push_str(" then ");
        write_node(&self.body, &self.schema, &self.params, &mut out);
        out.push_str(" else 0");
        out
    }

    pub fn parameters(&self) -> &[ParamSlot] {
        &self.params
    }

    /// Current slot values in slot order.
    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Slot values with `theta` overriding defaults by name.
    pub fn resolve(&self, theta: &BTreeMap<String, f64>) -> Result<Vec<f64>, EvalError> {
        let mut values = self.values();
        for (name, &v) in theta {
            let i = self
                .param_index(name)
                .ok_or_else(|| EvalError::UnknownParam(name.clone()))?;
            values[i] = v;
        }
        Ok(values)
    }

    #[inline]
    pub fn guard_holds(&self, row: &[f64], values: &[f64]) -> bool {
        self.guard.iter().all(|c| {
            let rhs = match c.rhs {
                Atom::Num(v) => v,
                Atom::Param(i) => values[i],
            };
            c.cmp.holds(row[c.feature], rhs)
        })
    }

    /// Fast path: no schema or name checks. `values` is indexed like
    /// `params`.
    #[inline]
    pub fn eval_values(&self, row: &[f64], values: &[f64]) -> f64 {
        if !self.guard_holds(row, values) {
            return 0.0;
        }
        eval_node(&self.body, row, values).clamp(-OUTPUT_CLIP, OUTPUT_CLIP)
    }

    /// Body value before the output clip (still protected).
    pub fn raw_body(&self, row: &[f64], values: &[f64]) -> f64 {
        eval_node(&self.body, row, values)
    }

    pub fn evaluate(&self, row: &[f64], theta: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
        if row.len() != self.schema.len() {
            return Err(EvalError::Schema {
                expected: self.schema.len(),
                got: row.len(),
            });
        }
        let values = self.resolve(theta)?;
        Ok(self.eval_values(row, &values))
    }

    /// Copy with slot defaults replaced.
    pub fn with_values(&self, values: &[f64]) -> ExpertExpr {
        let mut e = self.clone();
        for (p, &v) in e.params.iter_mut().zip(values) {
            p.value = v;
        }
        e
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = true);
    }

    /// Indices of non-frozen slots.
    pub fn free_params(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| !self.params[i].frozen).collect()
    }

    /// A slot name not yet used, of the form `<prefix><n>`.
    pub fn fresh_name(&self, prefix: &str) -> String {
        (0..)
            .map(|n| format!("{prefix}{n}"))
            .find(|name| self.param_index(name).is_none())
            .expect("unbounded counter")
    }

    /// Turns every literal guard threshold into a boundary slot. Returns the
    /// names of the new slots.
    pub fn promote_guard_literals(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        for k in 0..self.guard.len() {
            if let Atom::Num(v) = self.guard[k].rhs {
                let name = self.fresh_name("b");
                self.params.push(ParamSlot {
                    name: name.clone(),
                    value: v,
                    frozen: false,
                    kind: ParamKind::Boundary,
                });
                self.guard[k].rhs = Atom::Param(self.params.len() - 1);
                names.push(name);
            }
        }
        self.reindex();
        names
    }

    /// Reorders slots into appearance order and drops unreferenced ones.
    pub fn reindex(&mut self) {
        let mut order: Vec<usize> = Vec::new();
        for c in &self.guard {
            if let Atom::Param(i) = c.rhs {
                order.push(i);
            }
        }
        self.body.visit_params(&mut |i| order.push(i));
        let mut map = vec![usize::MAX; self.params.len()];
        let mut params = Vec::with_capacity(order.len());
        for i in order {
            if map[i] == usize::MAX {
                map[i] = params.len();
                params.push(self.params[i].clone());
            }
        }
        for c in &mut self.guard {
            if let Atom::Param(i) = &mut c.rhs {
                *i = map[*i];
            }
        }
        self.body.remap_params(&map);
        self.params = params;
    }

    /// Feature indices the body reads, sorted and deduplicated.
    pub fn body_features(&self) -> Vec<usize> {
        let mut f = Vec::new();
        self.body.features(&mut f);
        f.sort_unstable();
        f.dedup();
        f
    }

    /// The body is the literal `0` or a slot currently at 0.
    pub fn is_null(&self) -> bool {
        match self.body {
            Node::Num(v) => v == 0.0,
            Node::Param(i) => self.params[i].value == 0.0,
            _ => false,
        }
    }
}

impl fmt::Display for ExpertExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}
