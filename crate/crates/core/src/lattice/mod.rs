//! Join semi-lattices and the CRDT value types built on them.
//!
//! Every state type here satisfies the same contract: `join` is associative,
//! commutative and idempotent, `bottom` is its identity, and the partial
//! order is derived from it (`a <= b` iff `join(a, b) == b`).
//!
//! Statically typed lattices implement [`Lattice`]. [`LatticeValue`] is the
//! dynamically typed union that the store, gossip payloads, and traces carry;
//! its `merge` is fallible because two values may be of different types.

mod element;
mod ops;
mod store;
mod types;
mod value;

use thiserror::Error;

pub use element::Element;
pub use ops::{op_delta, Op};
pub use store::Store;
pub(crate) use types::SlotMap;
pub use types::{BoolLattice, GCounter, GSet, MaxNat, PNCounter, TwoPSet};
pub use value::{bottom_of, LatticeType, LatticeValue, MapLattice, PairValue};

/// A join semi-lattice with a least element.
pub trait Lattice: Clone + PartialEq {
    fn bottom() -> Self;

    /// Least upper bound. Must be associative, commutative and idempotent.
    fn join(&self, other: &Self) -> Self;

    fn join_assign(&mut self, other: &Self) {
        *self = self.join(other);
    }

    /// `self <= other` in the order induced by `join`.
    fn leq(&self, other: &Self) -> bool {
        &self.join(other) == other
    }
}

impl<A: Lattice, B: Lattice> Lattice for (A, B) {
    fn bottom() -> Self {
        (A::bottom(), B::bottom())
    }

    fn join(&self, other: &Self) -> Self {
        (self.0.join(&other.0), self.1.join(&other.1))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch { expected: String, found: String },
    #[error("unknown lattice type '{0}'")]
    UnknownType(String),
    #[error("unknown operation '{0}'")]
    UnknownOp(String),
    #[error("negative increment {0}")]
    NegativeIncrement(i64),
    #[error("bad arguments for '{op}': {reason}")]
    BadArgs { op: String, reason: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
}

impl LatticeError {
    pub(crate) fn mismatch(expected: impl ToString, found: impl ToString) -> Self {
        LatticeError::TypeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
