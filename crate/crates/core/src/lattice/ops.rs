use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    BoolLattice, Element, GCounter, GSet, LatticeError, LatticeValue, MapLattice, MaxNat,
    PNCounter, TwoPSet,
};
use crate::ReplicaId;

/// An update operation. Every operation is applied by merging its
/// [`Op::delta`] into the current state, so operations are inflationary.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    GsetAdd { element: Element },
    TwopsetAdd { element: Element },
    TwopsetRemove { element: Element },
    CounterInc { replica: ReplicaId, n: u64 },
    PnInc { replica: ReplicaId, n: u64 },
    PnDec { replica: ReplicaId, n: u64 },
    MaxSet { value: u64 },
    BoolSet,
    MapPut { key: String, inner: Box<Op> },
}

impl Op {
    /// Builds an operation from its name and JSON arguments.
    ///
    /// Counter operations take `[n]` (the slot is `origin`) or `[replica, n]`.
    /// `map_put` takes `[key, inner_name, inner_args...]`.
    pub fn parse(name: &str, args: &[Value], origin: ReplicaId) -> Result<Op, LatticeError> {
        let bad = |reason: &str| LatticeError::BadArgs {
            op: name.to_owned(),
            reason: reason.to_owned(),
        };
        let element = || match args {
            [v] => Ok(Element::from_json(v)),
            _ => Err(bad("expected exactly one element")),
        };
        let counter = || -> Result<(ReplicaId, u64), LatticeError> {
            let (replica, n) = match args {
                [n] => (origin, n),
                [r, n] => {
                    let r = r
                        .as_u64()
                        .and_then(|r| u32::try_from(r).ok())
                        .ok_or_else(|| bad("replica must be a small non-negative integer"))?;
                    (ReplicaId(r), n)
                }
                _ => return Err(bad("expected [n] or [replica, n]")),
            };
            match n.as_i64() {
                Some(v) if v < 0 => Err(LatticeError::NegativeIncrement(v)),
                _ => n
                    .as_u64()
                    .map(|n| (replica, n))
                    .ok_or_else(|| bad("increment must be an integer")),
            }
        };
        Ok(match name {
            "gset_add" => Op::GsetAdd { element: element()? },
            "twopset_add" => Op::TwopsetAdd { element: element()? },
            "twopset_remove" => Op::TwopsetRemove { element: element()? },
            "counter_inc" => {
                let (replica, n) = counter()?;
                Op::CounterInc { replica, n }
            }
            "pn_inc" => {
                let (replica, n) = counter()?;
                Op::PnInc { replica, n }
            }
            "pn_dec" => {
                let (replica, n) = counter()?;
                Op::PnDec { replica, n }
            }
            "max_set" => match args {
                [v] => Op::MaxSet {
                    value: v.as_u64().ok_or_else(|| bad("expected a natural number"))?,
                },
                _ => return Err(bad("expected one natural number")),
            },
            "bool_set" => {
                if !args.is_empty() {
                    return Err(bad("takes no arguments"));
                }
                Op::BoolSet
            }
            "map_put" => match args {
                [Value::String(key), Value::String(inner), rest @ ..] => Op::MapPut {
                    key: key.clone(),
                    inner: Box::new(Op::parse(inner, rest, origin)?),
                },
                _ => return Err(bad("expected [key, inner_op, inner_args...]")),
            },
            other => return Err(LatticeError::UnknownOp(other.to_owned())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::GsetAdd { .. } => "gset_add",
            Op::TwopsetAdd { .. } => "twopset_add",
            Op::TwopsetRemove { .. } => "twopset_remove",
            Op::CounterInc { .. } => "counter_inc",
            Op::PnInc { .. } => "pn_inc",
            Op::PnDec { .. } => "pn_dec",
            Op::MaxSet { .. } => "max_set",
            Op::BoolSet => "bool_set",
            Op::MapPut { .. } => "map_put",
        }
    }

    /// The smallest value whose merge into a state applies this operation.
    pub fn delta(&self) -> LatticeValue {
        match self {
            Op::GsetAdd { element } => GSet::singleton(element.clone()).into(),
            Op::TwopsetAdd { element } => TwoPSet {
                adds: GSet::singleton(element.clone()),
                removes: GSet::new(),
            }
            .into(),
            Op::TwopsetRemove { element } => TwoPSet {
                adds: GSet::new(),
                removes: GSet::singleton(element.clone()),
            }
            .into(),
            Op::CounterInc { replica, n } => GCounter::with_slot(*replica, *n).into(),
            Op::PnInc { replica, n } => PNCounter {
                increments: GCounter::with_slot(*replica, *n),
                decrements: GCounter::new(),
            }
            .into(),
            Op::PnDec { replica, n } => PNCounter {
                increments: GCounter::new(),
                decrements: GCounter::with_slot(*replica, *n),
            }
            .into(),
            Op::MaxSet { value } => MaxNat::new(*value).into(),
            Op::BoolSet => BoolLattice::new(true).into(),
            Op::MapPut { key, inner: op } => {
                let inner = op.delta();
                let mut m = MapLattice::new(inner.lattice_type());
                m.put(key, &inner).expect("delta matches its own type");
                LatticeValue::Map(m)
            }
        }
    }

    /// Delta of a counter op, re-based on the current state's slot.
    ///
    /// Counter slots hold running totals, so an increment of `n` at a slot
    /// currently holding `c` is the delta `slot = c + n`. Other ops are
    /// state-independent.
    pub fn delta_against(&self, state: &LatticeValue) -> Result<LatticeValue, LatticeError> {
        let slot = |c: &GCounter, r: ReplicaId, n: u64| GCounter::with_slot(r, c.get(r) + n);
        Ok(match (self, state) {
            (Op::CounterInc { replica, n }, LatticeValue::GCounter(c)) => {
                slot(c, *replica, *n).into()
            }
            (Op::PnInc { replica, n }, LatticeValue::PNCounter(c)) => PNCounter {
                increments: slot(&c.increments, *replica, *n),
                decrements: GCounter::new(),
            }
            .into(),
            (Op::PnDec { replica, n }, LatticeValue::PNCounter(c)) => PNCounter {
                increments: GCounter::new(),
                decrements: slot(&c.decrements, *replica, *n),
            }
            .into(),
            (Op::MapPut { key, inner: op }, LatticeValue::Map(m)) => {
                let inner = op.delta_against(&m.get(key))?;
                let mut out = MapLattice::new(m.value_type().clone());
                out.put(key, &inner)?;
                LatticeValue::Map(out)
            }
            _ => {
                let d = self.delta();
                if d.lattice_type() != state.lattice_type() {
                    return Err(LatticeError::mismatch(state.lattice_type(), d.lattice_type()));
                }
                d
            }
        })
    }
}

/// `op_delta(name, args)`: parse and produce the operation's delta.
pub fn op_delta(name: &str, args: &[Value], origin: ReplicaId) -> Result<LatticeValue, LatticeError> {
    Ok(Op::parse(name, args, origin)?.delta())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Lattice;
    use serde_json::json;

    #[test]
    fn remove_delta() {
        let d = op_delta("twopset_remove", &[json!("ferrari")], ReplicaId(0)).unwrap();
        assert_eq!(
            d,
            TwoPSet {
                adds: GSet::new(),
                removes: ["ferrari"].into_iter().collect()
            }
            .into()
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(
            op_delta("frobnicate", &[], ReplicaId(0)),
            Err(LatticeError::UnknownOp(_))
        ));
        assert!(matches!(
            op_delta("counter_inc", &[json!(-3)], ReplicaId(0)),
            Err(LatticeError::NegativeIncrement(-3))
        ));
        assert!(op_delta("gset_add", &[], ReplicaId(0)).is_err());
    }

    #[test]
    fn duplicate_add_is_idempotent() {
        let d = op_delta("gset_add", &[json!("x")], ReplicaId(0)).unwrap();
        let once = LatticeValue::bottom(&crate::LatticeType::GSet).merge(&d).unwrap();
        assert_eq!(once.merge(&d).unwrap(), once);
    }

    #[test]
    fn counter_delta_against_accumulates() {
        let op = Op::parse("counter_inc", &[json!(3)], ReplicaId(2)).unwrap();
        let mut state = LatticeValue::bottom(&crate::LatticeType::GCounter);
        for _ in 0..4 {
            let d = op.delta_against(&state).unwrap();
            state = state.merge(&d).unwrap();
        }
        match state {
            LatticeValue::GCounter(c) => assert_eq!(c.total(), 12),
            _ => unreachable!(),
        }
        // a bare delta is a slot, so merging it twice counts once
        let bare = GCounter::with_slot(ReplicaId(2), 3);
        assert_eq!(bare.join(&bare).total(), 3);
    }

    #[test]
    fn map_put_nests() {
        let op = Op::parse(
            "map_put",
            &[json!("cart"), json!("gset_add"), json!("potato")],
            ReplicaId(0),
        )
        .unwrap();
        let LatticeValue::Map(m) = op.delta() else { panic!() };
        assert_eq!(m.get("cart"), GSet::singleton("potato".into()).into());
    }
}
