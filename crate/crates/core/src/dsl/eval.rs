use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde_json::{Map, Value};

use super::ast::{Literal, Node, PredOp, Predicate, Projection, Term};
use crate::lattice::{LatticeType, LatticeValue};
use crate::query::{QueryError, QueryValue};
use crate::{Element, Store};

/// Evaluates a query against a store. Sources name keys of the store.
pub fn evaluate(node: &Node, env: &Store) -> Result<QueryValue, QueryError> {
    Ok(match node {
        Node::Source { name, projection } => QueryValue::Set(read_source(env, name, *projection)?),
        Node::Filter { child, predicate } => {
            let set = set(child, env)?;
            QueryValue::Set(set.into_iter().filter(|e| predicate_holds(predicate, e)).collect())
        }
        Node::Project { child, fields } => {
            QueryValue::Set(set(child, env)?.iter().map(|e| project(e, fields)).collect())
        }
        Node::Union(l, r) => {
            let mut a = set(l, env)?;
            a.extend(set(r, env)?);
            QueryValue::Set(a)
        }
        Node::Intersect(l, r) => {
            let (a, b) = (set(l, env)?, set(r, env)?);
            QueryValue::Set(a.intersection(&b).cloned().collect())
        }
        Node::Except(l, r) => {
            let (a, b) = (set(l, env)?, set(r, env)?);
            QueryValue::Set(a.difference(&b).cloned().collect())
        }
        Node::Count(c) => QueryValue::Count(set(c, env)?.len() as u64),
        Node::Plus(l, r) => QueryValue::Count(count(l, env)?.saturating_add(count(r, env)?)),
        Node::Compare { expr, op, literal } => QueryValue::Bool(op.holds(count(expr, env)?, *literal)),
    })
}

fn set(node: &Node, env: &Store) -> Result<BTreeSet<Element>, QueryError> {
    match evaluate(node, env)? {
        QueryValue::Set(s) => Ok(s),
        other => Err(QueryError::Dsl(format!("expected a set, got {other}"))),
    }
}

fn count(node: &Node, env: &Store) -> Result<u64, QueryError> {
    match evaluate(node, env)? {
        QueryValue::Count(n) => Ok(n),
        other => Err(QueryError::Dsl(format!("expected a count, got {other}"))),
    }
}

fn read_source(env: &Store, name: &str, projection: Option<Projection>) -> Result<BTreeSet<Element>, QueryError> {
    let value = env
        .get(name)
        .ok_or_else(|| QueryError::UnboundSource(name.to_owned()))?;
    match (value, projection) {
        (LatticeValue::GSet(s), None) => Ok(s.elements.clone()),
        (LatticeValue::TwoPSet(s), Some(Projection::Adds)) => Ok(s.adds.elements.clone()),
        (LatticeValue::TwoPSet(s), Some(Projection::Removes)) => Ok(s.removes.elements.clone()),
        (v, p) => Err(QueryError::TypeMismatch {
            query: match p {
                Some(p) => format!("{name}.{}", p.as_str()),
                None => name.to_owned(),
            },
            expected: source_type(p).to_string(),
            found: v.lattice_type().to_string(),
        }),
    }
}

/// Type a source must have to be read with `projection`.
pub fn source_type(projection: Option<Projection>) -> LatticeType {
    match projection {
        None => LatticeType::GSet,
        Some(_) => LatticeType::TwoPSet,
    }
}

pub fn predicate_holds(p: &Predicate, e: &Element) -> bool {
    let v = e.to_json();
    p.terms.iter().all(|t| term_holds(t, &v))
}

/// A missing field fails every comparison. Values of a different JSON type
/// than the literal are unequal and unordered.
pub(crate) fn term_holds(t: &Term, v: &Value) -> bool {
    let Some(field) = v.get(&t.field) else {
        return false;
    };
    let ord = match (&t.literal, field) {
        (Literal::Num(n), Value::Number(x)) => x.as_f64().and_then(|x| x.partial_cmp(n)),
        (Literal::Str(s), Value::String(x)) => Some(x.as_str().cmp(s.as_str())),
        _ => None,
    };
    match (t.op, ord) {
        (PredOp::Ne, None) => true,
        (_, None) => false,
        (PredOp::Eq, Some(o)) => o == Ordering::Equal,
        (PredOp::Ne, Some(o)) => o != Ordering::Equal,
        (PredOp::Gt, Some(o)) => o == Ordering::Greater,
        (PredOp::Ge, Some(o)) => o != Ordering::Less,
        (PredOp::Lt, Some(o)) => o == Ordering::Less,
        (PredOp::Le, Some(o)) => o != Ordering::Greater,
    }
}

fn project(e: &Element, fields: &[String]) -> Element {
    let v = e.to_json();
    let mut out = Map::new();
    for f in fields {
        out.insert(f.clone(), v.get(f).cloned().unwrap_or(Value::Null));
    }
    Element::from_json(&Value::Object(out))
}
