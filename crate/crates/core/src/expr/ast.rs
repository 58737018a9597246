use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        }
    }

    #[inline]
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Lt => lhs < rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Ge => lhs >= rhs,
        }
    }

    /// True for `>` and `>=`, which bound the feature from below.
    pub fn is_lower_bound(self) -> bool {
        matches!(self, Cmp::Gt | Cmp::Ge)
    }
}

/// Right-hand side of a guard comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    Num(f64),
    Param(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardClause {
    pub feature: usize,
    pub cmp: Cmp,
    pub rhs: Atom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log1p,
    Tanh,
    Sigmoid,
    Abs,
    Sqrt,
    Min,
    Max,
    Gauss,
    Clip,
}

impl Func {
    pub const ALL: [Func; 10] = [
        Func::Exp,
        Func::Log1p,
        Func::Tanh,
        Func::Sigmoid,
        Func::Abs,
        Func::Sqrt,
        Func::Min,
        Func::Max,
        Func::Gauss,
        Func::Clip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log1p => "log1p",
            Func::Tanh => "tanh",
            Func::Sigmoid => "sigmoid",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
            Func::Gauss => "gauss",
            Func::Clip => "clip",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            Func::Gauss | Func::Clip => 3,
            _ => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Feature(usize),
    Param(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    pub fn bin(op: BinOp, a: Node, b: Node) -> Node {
        Node::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn call(f: Func, args: Vec<Node>) -> Node {
        Node::Call(f, args)
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Node::Num(_) | Node::Feature(_) | Node::Param(_) => 1,
            Node::Neg(a) => 1 + a.size(),
            Node::Bin(_, a, b) => 1 + a.size() + b.size(),
            Node::Call(_, args) => 1 + args.iter().map(Node::size).sum::<usize>(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Num(_) | Node::Feature(_) | Node::Param(_) => 1,
            Node::Neg(a) => 1 + a.depth(),
            Node::Bin(_, a, b) => 1 + a.depth().max(b.depth()),
            Node::Call(_, args) => 1 + args.iter().map(Node::depth).max().unwrap_or(0),
        }
    }

    pub(crate) fn visit_params(&self, f: &mut impl FnMut(usize)) {
        match self {
            Node::Param(i) => f(*i),
            Node::Num(_) | Node::Feature(_) => {}
            Node::Neg(a) => a.visit_params(f),
            Node::Bin(_, a, b) => {
                a.visit_params(f);
                b.visit_params(f);
            }
            Node::Call(_, args) => args.iter().for_each(|a| a.visit_params(f)),
        }
    }

    pub(crate) fn remap_params(&mut self, map: &[usize]) {
        match self {
            Node::Param(i) => *i = map[*i],
            Node::Num(_) | Node::Feature(_) => {}
            Node::Neg(a) => a.remap_params(map),
            Node::Bin(_, a, b) => {
                a.remap_params(map);
                b.remap_params(map);
            }
            Node::Call(_, args) => args.iter_mut().for_each(|a| a.remap_params(map)),
        }
    }

    pub fn features(&self, out: &mut Vec<usize>) {
        match self {
            Node::Feature(j) => out.push(*j),
            Node::Num(_) | Node::Param(_) => {}
            Node::Neg(a) => a.features(out),
            Node::Bin(_, a, b) => {
                a.features(out);
                b.features(out);
            }
            Node::Call(_, args) => args.iter().for_each(|a| a.features(out)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Coefficient,
    Boundary,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Coefficient => "coefficient",
            ParamKind::Boundary => "boundary",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub value: f64,
    pub frozen: bool,
    pub kind: ParamKind,
}

/// `if <guard> then <body> else 0`.
///
/// `params` is kept in order of first appearance (guard, then body), and
/// every `Param(i)` in the trees indexes into it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertExpr {
    pub guard: Vec<GuardClause>,
    pub body: Node,
    pub params: Vec<ParamSlot>,
    pub schema: Arc<[String]>,
}
