use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lattice::{BoolLattice, GSet, LatticeType, LatticeValue, MaxNat};
use crate::Element;

/// Result of evaluating a query on some state.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryValue {
    Bool(bool),
    Count(u64),
    Int(i64),
    Set(BTreeSet<Element>),
}

/// Shape of a [`QueryValue`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Bool,
    Count,
    Int,
    Set,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::Bool => "bool",
            ValueKind::Count => "count",
            ValueKind::Int => "int",
            ValueKind::Set => "set",
        })
    }
}

impl ValueKind {
    /// The lattice a value of this kind lives in, if any. Signed integers have
    /// no least element, so they do not map to a lattice.
    pub fn lattice_type(self) -> Option<LatticeType> {
        match self {
            ValueKind::Bool => Some(LatticeType::Bool),
            ValueKind::Count => Some(LatticeType::MaxNat),
            ValueKind::Set => Some(LatticeType::GSet),
            ValueKind::Int => None,
        }
    }
}

impl QueryValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            QueryValue::Bool(_) => ValueKind::Bool,
            QueryValue::Count(_) => ValueKind::Count,
            QueryValue::Int(_) => ValueKind::Int,
            QueryValue::Set(_) => ValueKind::Set,
        }
    }

    /// Order on results: `false <= true`, numeric order, set inclusion.
    /// `None` when the kinds differ.
    pub fn leq(&self, other: &QueryValue) -> Option<bool> {
        use QueryValue as Q;
        match (self, other) {
            (Q::Bool(a), Q::Bool(b)) => Some(!a || *b),
            (Q::Count(a), Q::Count(b)) => Some(a <= b),
            (Q::Int(a), Q::Int(b)) => Some(a <= b),
            (Q::Set(a), Q::Set(b)) => Some(a.is_subset(b)),
            _ => None,
        }
    }

    pub fn to_lattice(&self) -> Option<LatticeValue> {
        match self {
            QueryValue::Bool(b) => Some(BoolLattice::new(*b).into()),
            QueryValue::Count(n) => Some(MaxNat::new(*n).into()),
            QueryValue::Set(s) => Some(GSet { elements: s.clone() }.into()),
            QueryValue::Int(_) => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            QueryValue::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for QueryValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryValue::Bool(b) => write!(f, "{b}"),
            QueryValue::Count(n) => write!(f, "{n}"),
            QueryValue::Int(n) => write!(f, "{n}"),
            QueryValue::Set(s) => {
                f.write_str("{")?;
                for (i, e) in s.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{e}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// Outcome of a locally evaluated threshold query.
///
/// `Ready` is definitive: it holds on every later state of the replica and on
/// the global join. `Unknown` is an abort and carries no information.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOutcome {
    Ready(QueryValue),
    Unknown,
}

impl QueryOutcome {
    pub fn is_ready(&self) -> bool {
        matches!(self, QueryOutcome::Ready(_))
    }
}
