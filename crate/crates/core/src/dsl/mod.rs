//! A small relational query language over set-valued CRDT sources, with a
//! syntactic monotonicity classifier.
//!
//! Selection, projection, union, intersection, counting and addition of
//! counts are monotone; set difference and downward comparisons (`<`, `<=`,
//! `==`) are not. A query is monotone iff every node is. The class picks the
//! execution plan: monotone upward thresholds run locally with definitive
//! results, everything non-monotone is coordinated.

mod ast;
mod eval;
mod exec;
mod lexer;
mod parser;
pub mod witness;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::LatticeType;

pub use ast::{CmpOp, Literal, Node, PredOp, Predicate, Projection, Sort, Term};
pub use eval::{evaluate, predicate_holds, source_type};
pub use exec::{execute, Execution};
pub use parser::parse;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DslError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("type error at {line}:{col}: {message}")]
    Type {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("unknown source '{0}'")]
    UnknownSource(String),
    #[error("source '{name}' is a {found}, but the query reads it as a {expected}")]
    SourceType {
        name: String,
        expected: String,
        found: String,
    },
    #[error("empty query")]
    Empty,
}

impl DslError {
    pub(crate) fn syntax(line: usize, col: usize, message: impl Into<String>) -> Self {
        DslError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }

    pub(crate) fn type_error(line: usize, col: usize, message: impl Into<String>) -> Self {
        DslError::Type {
            line,
            col,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum MonotonicityClass {
    Monotone,
    /// `witness` is the path of the shallowest non-monotone node: `root`,
    /// then `.i` for the i-th child.
    NonMonotone { witness: String },
}

impl MonotonicityClass {
    pub fn is_monotone(&self) -> bool {
        matches!(self, MonotonicityClass::Monotone)
    }

    pub fn witness(&self) -> Option<&str> {
        match self {
            MonotonicityClass::Monotone => None,
            MonotonicityClass::NonMonotone { witness } => Some(witness),
        }
    }
}

impl fmt::Display for MonotonicityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonotonicityClass::Monotone => f.write_str("Monotone"),
            MonotonicityClass::NonMonotone { witness } => write!(f, "NonMonotone({witness})"),
        }
    }
}

pub fn classify(ast: &Node) -> MonotonicityClass {
    let mut queue = VecDeque::from([(ast, "root".to_owned())]);
    while let Some((node, path)) = queue.pop_front() {
        if !node.is_locally_monotone() {
            return MonotonicityClass::NonMonotone { witness: path };
        }
        for (i, c) in node.children().into_iter().enumerate() {
            queue.push_back((c, format!("{path}.{i}")));
        }
    }
    MonotonicityClass::Monotone
}

/// Follows a witness path back to its node.
pub fn node_at<'a>(ast: &'a Node, path: &str) -> Option<&'a Node> {
    let mut parts = path.split('.');
    if parts.next() != Some("root") {
        return None;
    }
    parts.try_fold(ast, |n, i| n.children().get(i.parse::<usize>().ok()?).copied())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Evaluate on the local replica; `true` is definitive, else unknown.
    LocalThreshold,
    /// Local value, tagged as a possibly stale lower bound.
    LocalLowerBound,
    /// Read through the coordination layer.
    Coordinated,
}

impl fmt::Display for PlanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanMode::LocalThreshold => "LocalThreshold",
            PlanMode::LocalLowerBound => "LocalLowerBound",
            PlanMode::Coordinated => "Coordinated",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryPlan {
    pub ast: Node,
    pub class: MonotonicityClass,
    pub mode: PlanMode,
}

/// Chooses the execution mode. Monotone set- or count-valued queries run as
/// local lower bounds only when the caller says stale answers are fine.
pub fn plan(ast: &Node, class: &MonotonicityClass, stale_tolerant: bool) -> QueryPlan {
    let mode = plan_mode(class.is_monotone(), ast.sort() == Sort::Bool, stale_tolerant);
    QueryPlan {
        ast: ast.clone(),
        class: class.clone(),
        mode,
    }
}

/// Shared by DSL and registry queries.
pub fn plan_mode(monotone: bool, threshold: bool, stale_tolerant: bool) -> PlanMode {
    match (monotone, threshold) {
        (false, _) => PlanMode::Coordinated,
        (true, true) => PlanMode::LocalThreshold,
        (true, false) if stale_tolerant => PlanMode::LocalLowerBound,
        (true, false) => PlanMode::Coordinated,
    }
}

/// Checks every source against a key schema.
pub fn check_sources(ast: &Node, schema: &BTreeMap<String, LatticeType>) -> Result<(), DslError> {
    for (name, projection) in ast.sources() {
        let found = schema
            .get(&name)
            .ok_or_else(|| DslError::UnknownSource(name.clone()))?;
        let expected = source_type(projection);
        if *found != expected {
            return Err(DslError::SourceType {
                name,
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
    }
    Ok(())
}

/// The schema a query implies on its own: projected sources are two-phase
/// sets, bare sources grow-only sets.
pub fn infer_schema(ast: &Node) -> Result<BTreeMap<String, LatticeType>, DslError> {
    let mut schema: BTreeMap<String, LatticeType> = BTreeMap::new();
    for (name, projection) in ast.sources() {
        let ty = source_type(projection);
        match schema.get(&name) {
            Some(prev) if *prev != ty => {
                return Err(DslError::SourceType {
                    name,
                    expected: prev.to_string(),
                    found: ty.to_string(),
                })
            }
            _ => {
                schema.insert(name, ty);
            }
        }
    }
    Ok(schema)
}

/// Everything `classify` reports about a query text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub query: String,
    #[serde(flatten)]
    pub class: MonotonicityClass,
    pub plan: PlanMode,
}

/// Parses, classifies and plans `text` in one go.
pub fn classify_text(text: &str, stale_tolerant: bool) -> Result<Classification, DslError> {
    let ast = parse(text)?;
    let class = classify(&ast);
    let p = plan(&ast, &class, stale_tolerant);
    Ok(Classification {
        query: ast.to_string(),
        class,
        plan: p.mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_of(text: &str) -> MonotonicityClass {
        classify(&parse(text).unwrap())
    }

    #[test]
    fn headline_queries() {
        assert_eq!(
            class_of(r#"COUNT(FILTER(txns, type == "GIFTCARD" AND amount > 100)) > 50"#),
            MonotonicityClass::Monotone
        );
        assert_eq!(
            class_of("PLUS(COUNT(cart.adds), COUNT(cart.removes)) > 100"),
            MonotonicityClass::Monotone
        );
        assert_eq!(
            class_of("EXCEPT(cart.adds, cart.removes)"),
            MonotonicityClass::NonMonotone { witness: "root".into() }
        );
    }

    #[test]
    fn shallowest_witness() {
        let c = class_of("COUNT(UNION(a, EXCEPT(b, c))) < 3");
        assert_eq!(c.witness(), Some("root"));
        let c = class_of("COUNT(UNION(a, EXCEPT(b, EXCEPT(c, d)))) > 3");
        assert_eq!(c.witness(), Some("root.0.0.1"));
        let ast = parse("COUNT(UNION(a, EXCEPT(b, EXCEPT(c, d)))) > 3").unwrap();
        assert!(matches!(node_at(&ast, "root.0.0.1"), Some(Node::Except(..))));
        assert!(node_at(&ast, "root.7").is_none());
    }

    #[test]
    fn plans() {
        let p = |t: &str, stale| {
            let ast = parse(t).unwrap();
            plan(&ast, &classify(&ast), stale).mode
        };
        assert_eq!(
            p(r#"COUNT(FILTER(txns, type == "GIFTCARD" AND amount > 100)) > 50"#, false),
            PlanMode::LocalThreshold
        );
        assert_eq!(p("COUNT(x) == 0", true), PlanMode::Coordinated);
        assert_eq!(p("cart.adds", true), PlanMode::LocalLowerBound);
        assert_eq!(p("cart.adds", false), PlanMode::Coordinated);
        assert_eq!(p("EXCEPT(a, b)", true), PlanMode::Coordinated);
    }

    #[test]
    fn sources_against_schema() {
        let schema = BTreeMap::from([
            ("cart".to_owned(), LatticeType::TwoPSet),
            ("txns".to_owned(), LatticeType::GSet),
        ]);
        assert!(check_sources(&parse("EXCEPT(cart.adds, cart.removes)").unwrap(), &schema).is_ok());
        assert_eq!(
            check_sources(&parse("COUNT(orders) > 1").unwrap(), &schema),
            Err(DslError::UnknownSource("orders".into()))
        );
        assert!(matches!(
            check_sources(&parse("cart").unwrap(), &schema),
            Err(DslError::SourceType { .. })
        ));
        assert!(infer_schema(&parse("UNION(a, a.adds)").unwrap()).is_err());
    }

    #[test]
    fn classification_json() {
        let c = classify_text("EXCEPT(cart.adds, cart.removes)", true).unwrap();
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"query":"EXCEPT(cart.adds, cart.removes)","class":"non_monotone","witness":"root","plan":"coordinated"}"#
        );
    }
}
