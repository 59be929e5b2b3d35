//! Built-in queries, addressable by name from scenario files.

use std::collections::BTreeSet;

use serde_json::Value;

use super::{compose, LatticeFn, MonotoneFn, QueryError, QueryValue, ThresholdQuery, ValueKind};
use crate::lattice::{LatticeType, LatticeValue};
use crate::Element;

/// Names accepted by [`lookup`]. `cardinality_gt(k)` takes an integer.
pub const NAMES: [&str; 5] = [
    "suspicious_activity",
    "rate_limiter",
    "contents",
    "counter_value",
    "cardinality_gt(k)",
];

/// A registry entry resolved against the type of the key it reads.
#[derive(Clone, Debug)]
pub struct Registered {
    pub function: LatticeFn,
    pub monotone: bool,
    pub threshold: bool,
}

/// `|s|` on a grow-only set.
pub fn cardinality() -> MonotoneFn {
    MonotoneFn::assume(LatticeFn::new(
        "cardinality",
        LatticeType::GSet,
        ValueKind::Count,
        |v| match v {
            LatticeValue::GSet(s) => Ok(QueryValue::Count(s.len() as u64)),
            _ => unreachable!("source type checked"),
        },
    ))
}

/// `n > k` on naturals.
pub fn greater_than(k: u64) -> MonotoneFn {
    MonotoneFn::assume(LatticeFn::new(
        format!("gt{k}"),
        LatticeType::MaxNat,
        ValueKind::Bool,
        move |v| match v {
            LatticeValue::MaxNat(m) => Ok(QueryValue::Bool(m.value > k)),
            _ => unreachable!("source type checked"),
        },
    ))
}

/// Selection of gift-card transactions over 100.
pub fn large_giftcards() -> MonotoneFn {
    MonotoneFn::assume(LatticeFn::new(
        "large_giftcards",
        LatticeType::GSet,
        ValueKind::Set,
        |v| match v {
            LatticeValue::GSet(s) => Ok(QueryValue::Set(
                s.iter().filter(|e| is_large_giftcard(e)).cloned().collect(),
            )),
            _ => unreachable!("source type checked"),
        },
    ))
}

fn is_large_giftcard(e: &Element) -> bool {
    let v = e.to_json();
    v.get("type") == Some(&Value::from("GIFTCARD"))
        && v.get("amount").and_then(Value::as_f64).is_some_and(|a| a > 100.0)
}

/// More than 50 gift-card transactions over 100.
pub fn suspicious_activity() -> ThresholdQuery {
    let count = compose(&large_giftcards(), &cardinality()).expect("set -> count");
    let f = compose(&count, &greater_than(50)).expect("count -> bool");
    ThresholdQuery::new(named(f, "suspicious_activity")).expect("bool target")
}

/// `|A| + |R| > 100` on a two-phase set.
pub fn rate_limiter() -> ThresholdQuery {
    let actions = MonotoneFn::assume(LatticeFn::new(
        "actions",
        LatticeType::TwoPSet,
        ValueKind::Count,
        |v| match v {
            LatticeValue::TwoPSet(s) => Ok(QueryValue::Count((s.adds.len() + s.removes.len()) as u64)),
            _ => unreachable!("source type checked"),
        },
    ));
    let f = compose(&actions, &greater_than(100)).expect("count -> bool");
    ThresholdQuery::new(named(f, "rate_limiter")).expect("bool target")
}

/// `|s| > k`.
pub fn cardinality_gt(k: u64) -> ThresholdQuery {
    let f = compose(&cardinality(), &greater_than(k)).expect("count -> bool");
    ThresholdQuery::new(named(f, &format!("cardinality_gt({k})"))).expect("bool target")
}

/// `A - R`. Not monotone.
pub fn contents() -> LatticeFn {
    LatticeFn::new("contents", LatticeType::TwoPSet, ValueKind::Set, |v| match v {
        LatticeValue::TwoPSet(s) => Ok(QueryValue::Set(s.contents().elements)),
        _ => unreachable!("source type checked"),
    })
}

/// Counter total. Monotone on a grow-only counter, not on a PN-counter.
pub fn counter_value(ty: &LatticeType) -> Result<LatticeFn, QueryError> {
    match ty {
        LatticeType::GCounter => Ok(LatticeFn::new(
            "counter_value",
            LatticeType::GCounter,
            ValueKind::Int,
            |v| match v {
                LatticeValue::GCounter(c) => Ok(QueryValue::Int(c.total() as i64)),
                _ => unreachable!("source type checked"),
            },
        )),
        LatticeType::PNCounter => Ok(LatticeFn::new(
            "counter_value",
            LatticeType::PNCounter,
            ValueKind::Int,
            |v| match v {
                LatticeValue::PNCounter(c) => Ok(QueryValue::Int(c.value())),
                _ => unreachable!("source type checked"),
            },
        )),
        other => Err(QueryError::TypeMismatch {
            query: "counter_value".into(),
            expected: "gcounter or pncounter".into(),
            found: other.to_string(),
        }),
    }
}

fn named(f: MonotoneFn, name: &str) -> MonotoneFn {
    let inner = f.into_fn();
    let source = inner.source().clone();
    let target = inner.target();
    MonotoneFn::assume(LatticeFn::new(name, source, target, move |v| inner.apply(v)))
}

fn parse_cardinality_gt(name: &str) -> Option<u64> {
    name.strip_prefix("cardinality_gt")
        .map(|rest| rest.trim_start_matches([':', '(']).trim_end_matches(')'))
        .and_then(|k| k.trim().parse().ok())
}

/// Resolves a registry name against the type of the key it will read.
pub fn lookup(name: &str, key_type: &LatticeType) -> Result<Registered, QueryError> {
    let check = |f: &LatticeFn| -> Result<(), QueryError> {
        if f.source() != key_type {
            return Err(QueryError::TypeMismatch {
                query: name.to_owned(),
                expected: f.source().to_string(),
                found: key_type.to_string(),
            });
        }
        Ok(())
    };
    let threshold = |q: ThresholdQuery| -> Result<Registered, QueryError> {
        check(q.as_fn())?;
        Ok(Registered {
            function: q.as_fn().clone(),
            monotone: true,
            threshold: true,
        })
    };
    match name {
        "suspicious_activity" => threshold(suspicious_activity()),
        "rate_limiter" => threshold(rate_limiter()),
        "contents" => {
            let f = contents();
            check(&f)?;
            Ok(Registered {
                function: f,
                monotone: false,
                threshold: false,
            })
        }
        "counter_value" => Ok(Registered {
            function: counter_value(key_type)?,
            monotone: *key_type == LatticeType::GCounter,
            threshold: false,
        }),
        other => match parse_cardinality_gt(other) {
            Some(k) => threshold(cardinality_gt(k)),
            None => Err(QueryError::UnknownQuery(other.to_owned())),
        },
    }
}

/// Elements of a set value, for callers that only care about membership.
pub fn set_of(v: &QueryValue) -> Option<&BTreeSet<Element>> {
    match v {
        QueryValue::Set(s) => Some(s),
        _ => None,
    }
}
