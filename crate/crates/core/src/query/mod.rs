//! Queries as functions from lattice states to results.
//!
//! A query is monotone when `i <= j` implies `f(i) <= f(j)`. Threshold
//! queries are monotone boolean queries evaluated with abort semantics: a
//! local `true` is final, anything else is [`QueryOutcome::Unknown`].
//! Non-monotone queries are evaluated on a join of replica states via
//! [`eval_on_join`]; getting the join right is the coordination layer's job.

mod bound;
pub mod gen;
pub mod registry;
mod value;

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lattice::{LatticeError, LatticeType, LatticeValue};

pub use bound::{bind, BoundQuery, QuerySpec};
pub use value::{QueryOutcome, QueryValue, ValueKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("query '{query}' expects {expected}, got {found}")]
    TypeMismatch {
        query: String,
        expected: String,
        found: String,
    },
    #[error("cannot evaluate on an empty list of states")]
    EmptyInput,
    #[error("unknown query '{0}'")]
    UnknownQuery(String),
    #[error("query '{0}' is not a boolean threshold query")]
    NotThreshold(String),
    #[error("unbound source '{0}'")]
    UnboundSource(String),
    #[error("query: {0}")]
    Dsl(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

type ApplyFn = dyn Fn(&LatticeValue) -> Result<QueryValue, QueryError> + Send + Sync;

/// A named function from one lattice type to query values. No monotonicity
/// claim is attached; see [`MonotoneFn`].
#[derive(Clone)]
pub struct LatticeFn {
    name: String,
    source: LatticeType,
    target: ValueKind,
    apply: Arc<ApplyFn>,
}

impl fmt::Debug for LatticeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatticeFn")
            .field("name", &self.name)
            .field("source", &self.source)
            .field("target", &self.target)
            .finish()
    }
}

impl LatticeFn {
    pub fn new<F>(name: impl Into<String>, source: LatticeType, target: ValueKind, apply: F) -> Self
    where
        F: Fn(&LatticeValue) -> Result<QueryValue, QueryError> + Send + Sync + 'static,
    {
        LatticeFn {
            name: name.into(),
            source,
            target,
            apply: Arc::new(apply),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &LatticeType {
        &self.source
    }

    pub fn target(&self) -> ValueKind {
        self.target
    }

    /// Applies the function after checking the input type.
    pub fn apply(&self, state: &LatticeValue) -> Result<QueryValue, QueryError> {
        let found = state.lattice_type();
        if found != self.source {
            return Err(QueryError::TypeMismatch {
                query: self.name.clone(),
                expected: self.source.to_string(),
                found: found.to_string(),
            });
        }
        (self.apply)(state)
    }
}

/// A [`LatticeFn`] asserted to be monotone. The claim is trusted, and can be
/// spot-checked with [`check_monotone_sampled`].
#[derive(Clone, Debug)]
pub struct MonotoneFn(LatticeFn);

impl MonotoneFn {
    pub fn assume(f: LatticeFn) -> Self {
        MonotoneFn(f)
    }

    pub fn identity(ty: LatticeType) -> Result<Self, QueryError> {
        let kind = match ty {
            LatticeType::Bool => ValueKind::Bool,
            LatticeType::MaxNat => ValueKind::Count,
            LatticeType::GSet => ValueKind::Set,
            other => {
                return Err(QueryError::TypeMismatch {
                    query: "identity".into(),
                    expected: "bool, maxnat or gset".into(),
                    found: other.to_string(),
                })
            }
        };
        Ok(MonotoneFn(LatticeFn::new("identity", ty, kind, |v| {
            Ok(match v {
                LatticeValue::Bool(b) => QueryValue::Bool(b.value),
                LatticeValue::MaxNat(m) => QueryValue::Count(m.value),
                LatticeValue::GSet(s) => QueryValue::Set(s.elements.clone()),
                _ => unreachable!("checked by LatticeFn::apply"),
            })
        })))
    }

    pub fn as_fn(&self) -> &LatticeFn {
        &self.0
    }

    pub fn into_fn(self) -> LatticeFn {
        self.0
    }

    pub fn apply(&self, state: &LatticeValue) -> Result<QueryValue, QueryError> {
        self.0.apply(state)
    }
}

/// `g ∘ f`. Monotone functions compose into monotone functions.
pub fn compose(f: &MonotoneFn, g: &MonotoneFn) -> Result<MonotoneFn, QueryError> {
    let mid = f.0.target.lattice_type();
    if mid.as_ref() != Some(&g.0.source) {
        return Err(QueryError::TypeMismatch {
            query: format!("{} . {}", g.0.name, f.0.name),
            expected: g.0.source.to_string(),
            found: f.0.target.to_string(),
        });
    }
    let (f2, g2) = (f.0.clone(), g.0.clone());
    Ok(MonotoneFn(LatticeFn::new(
        format!("{}({})", g.0.name, f.0.name),
        f.0.source.clone(),
        g.0.target,
        move |v| {
            let inner = f2.apply(v)?;
            let lifted = inner.to_lattice().expect("checked at composition");
            g2.apply(&lifted)
        },
    )))
}

/// A monotone boolean query with abort semantics.
#[derive(Clone, Debug)]
pub struct ThresholdQuery(MonotoneFn);

impl ThresholdQuery {
    pub fn new(f: MonotoneFn) -> Result<Self, QueryError> {
        if f.0.target != ValueKind::Bool {
            return Err(QueryError::NotThreshold(f.0.name.clone()));
        }
        Ok(ThresholdQuery(f))
    }

    pub fn name(&self) -> &str {
        &self.0 .0.name
    }

    pub fn source(&self) -> &LatticeType {
        &self.0 .0.source
    }

    pub fn as_fn(&self) -> &LatticeFn {
        &self.0 .0
    }
}

/// Evaluates a threshold query on one replica's state: `Ready(true)` or
/// `Unknown`, never a definitive `false`.
pub fn eval_local(q: &ThresholdQuery, state: &LatticeValue) -> Result<QueryOutcome, QueryError> {
    match q.0.apply(state)? {
        QueryValue::Bool(true) => Ok(QueryOutcome::Ready(QueryValue::Bool(true))),
        _ => Ok(QueryOutcome::Unknown),
    }
}

/// Joins all `states` and evaluates `f` on the result.
pub fn eval_on_join(f: &LatticeFn, states: &[LatticeValue]) -> Result<QueryValue, QueryError> {
    let (first, rest) = states.split_first().ok_or(QueryError::EmptyInput)?;
    let mut joined = first.clone();
    for s in rest {
        joined = joined.merge(s)?;
    }
    f.apply(&joined)
}

/// One ordered pair `lower <= upper` on which `f` went backwards.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub lower: LatticeValue,
    pub upper: LatticeValue,
    pub f_lower: QueryValue,
    pub f_upper: QueryValue,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub function: String,
    pub pairs_checked: usize,
    pub violations: Vec<Violation>,
}

impl MonotonicityReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples `n_pairs` ordered pairs `(i, merge(i, delta))` of `f`'s source
/// type and reports every pair where `f(i) <= f(j)` fails.
pub fn check_monotone_sampled(f: &LatticeFn, n_pairs: usize, seed: u64) -> Result<MonotonicityReport, QueryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    for _ in 0..n_pairs {
        let lower = gen::random_value(&f.source, &mut rng);
        let upper = gen::grow(&lower, &mut rng);
        let (fl, fu) = (f.apply(&lower)?, f.apply(&upper)?);
        if fl.leq(&fu) != Some(true) {
            violations.push(Violation {
                lower,
                upper,
                f_lower: fl,
                f_upper: fu,
            });
        }
    }
    Ok(MonotonicityReport {
        function: f.name.clone(),
        pairs_checked: n_pairs,
        violations,
    })
}
