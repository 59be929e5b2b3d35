use std::fmt;

use serde::{Deserialize, Serialize};

/// Which half of a two-phase set a source reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Adds,
    Removes,
}

impl Projection {
    pub fn as_str(self) -> &'static str {
        match self {
            Projection::Adds => "adds",
            Projection::Removes => "removes",
        }
    }
}

/// Comparison used inside per-tuple filter predicates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredOp {
    Eq,
    Ne,
    Gt,
    Ge,
    Lt,
    Le,
}

/// Comparison of a count against a literal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
}

impl PredOp {
    pub fn symbol(self) -> &'static str {
        match self {
            PredOp::Eq => "==",
            PredOp::Ne => "!=",
            PredOp::Gt => ">",
            PredOp::Ge => ">=",
            PredOp::Lt => "<",
            PredOp::Le => "<=",
        }
    }
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
        }
    }

    pub fn holds(self, lhs: u64, rhs: u64) -> bool {
        match self {
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
        }
    }

    /// Only upward-closed comparisons survive growth of the count.
    pub fn is_monotone(self) -> bool {
        matches!(self, CmpOp::Gt | CmpOp::Ge)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Literal {
    Str(String),
    Num(f64),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => f.write_str(&serde_json::to_string(s).expect("strings serialize")),
            Literal::Num(n) => write!(f, "{n}"),
        }
    }
}

/// `field op literal`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub field: String,
    pub op: PredOp,
    pub literal: Literal,
}

/// Conjunction of terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub terms: Vec<Term>,
}

/// Static sort of an expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sort {
    Set,
    Count,
    Bool,
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sort::Set => "set",
            Sort::Count => "count",
            Sort::Bool => "bool",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Source {
        name: String,
        projection: Option<Projection>,
    },
    Filter {
        child: Box<Node>,
        predicate: Predicate,
    },
    Project {
        child: Box<Node>,
        fields: Vec<String>,
    },
    Union(Box<Node>, Box<Node>),
    Intersect(Box<Node>, Box<Node>),
    Except(Box<Node>, Box<Node>),
    Count(Box<Node>),
    Plus(Box<Node>, Box<Node>),
    Compare {
        expr: Box<Node>,
        op: CmpOp,
        literal: u64,
    },
}

impl Node {
    pub fn source(name: &str, projection: Option<Projection>) -> Node {
        Node::Source {
            name: name.to_owned(),
            projection,
        }
    }

    pub fn sort(&self) -> Sort {
        match self {
            Node::Source { .. }
            | Node::Filter { .. }
            | Node::Project { .. }
            | Node::Union(..)
            | Node::Intersect(..)
            | Node::Except(..) => Sort::Set,
            Node::Count(_) | Node::Plus(..) => Sort::Count,
            Node::Compare { .. } => Sort::Bool,
        }
    }

    pub fn children(&self) -> Vec<&Node> {
        match self {
            Node::Source { .. } => vec![],
            Node::Filter { child, .. } | Node::Project { child, .. } | Node::Count(child) => {
                vec![child]
            }
            Node::Compare { expr, .. } => vec![expr],
            Node::Union(l, r) | Node::Intersect(l, r) | Node::Except(l, r) | Node::Plus(l, r) => {
                vec![l, r]
            }
        }
    }

    /// Whether this operator, on its own, preserves order.
    pub fn is_locally_monotone(&self) -> bool {
        match self {
            Node::Except(..) => false,
            Node::Compare { op, .. } => op.is_monotone(),
            _ => true,
        }
    }

    /// Pre-order walk.
    pub fn walk<'a>(&'a self, out: &mut Vec<&'a Node>) {
        out.push(self);
        for c in self.children() {
            c.walk(out);
        }
    }

    /// Distinct `(name, projection)` pairs read by the expression.
    pub fn sources(&self) -> Vec<(String, Option<Projection>)> {
        let mut nodes = Vec::new();
        self.walk(&mut nodes);
        let mut out: Vec<(String, Option<Projection>)> = Vec::new();
        for n in nodes {
            if let Node::Source { name, projection } = n {
                let item = (name.clone(), *projection);
                if !out.contains(&item) {
                    out.push(item);
                }
            }
        }
        out
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Source { name, projection } => match projection {
                Some(p) => write!(f, "{name}.{}", p.as_str()),
                None => f.write_str(name),
            },
            Node::Filter { child, predicate } => {
                write!(f, "FILTER({child}, ")?;
                for (i, t) in predicate.terms.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    write!(f, "{} {} {}", t.field, t.op.symbol(), t.literal)?;
                }
                f.write_str(")")
            }
            Node::Project { child, fields } => write!(f, "PROJECT({child}, {})", fields.join(", ")),
            Node::Union(l, r) => write!(f, "UNION({l}, {r})"),
            Node::Intersect(l, r) => write!(f, "INTERSECT({l}, {r})"),
            Node::Except(l, r) => write!(f, "EXCEPT({l}, {r})"),
            Node::Count(c) => write!(f, "COUNT({c})"),
            Node::Plus(l, r) => write!(f, "PLUS({l}, {r})"),
            Node::Compare { expr, op, literal } => write!(f, "{expr} {} {literal}", op.symbol()),
        }
    }
}
