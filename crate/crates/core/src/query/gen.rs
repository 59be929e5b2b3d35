//! Seeded generators of lattice values and operations, used by sampled
//! monotonicity checks and property tests.

use rand::Rng;
use serde_json::json;

use crate::lattice::{
    BoolLattice, GCounter, GSet, LatticeType, LatticeValue, MapLattice, MaxNat, Op, PNCounter,
    PairValue, TwoPSet,
};
use crate::{Element, ReplicaId};

const KINDS: [&str; 3] = ["GIFTCARD", "BOOK", "FOOD"];
const AMOUNTS: [u64; 6] = [20, 99, 100, 101, 150, 500];
const MAP_KEYS: [&str; 3] = ["a", "b", "c"];

/// Draws from a small pool of plain strings and transaction records, so
/// random sets collide often and filters have something to select.
pub fn random_element<R: Rng + ?Sized>(rng: &mut R) -> Element {
    if rng.gen_bool(0.5) {
        Element::text(&format!("e{}", rng.gen_range(0..10)))
    } else {
        Element::from_json(&json!({
            "type": KINDS[rng.gen_range(0..KINDS.len())],
            "amount": AMOUNTS[rng.gen_range(0..AMOUNTS.len())],
            "id": rng.gen_range(0..12),
        }))
    }
}

fn random_gset<R: Rng + ?Sized>(rng: &mut R) -> GSet {
    let n = rng.gen_range(0..8);
    (0..n).map(|_| random_element(rng)).collect()
}

fn random_gcounter<R: Rng + ?Sized>(rng: &mut R) -> GCounter {
    let mut c = GCounter::new();
    for r in 0..3 {
        if rng.gen_bool(0.6) {
            c.inc(ReplicaId(r), rng.gen_range(0..10));
        }
    }
    c
}

pub fn random_value<R: Rng + ?Sized>(ty: &LatticeType, rng: &mut R) -> LatticeValue {
    match ty {
        LatticeType::GSet => random_gset(rng).into(),
        LatticeType::TwoPSet => TwoPSet {
            adds: random_gset(rng),
            removes: random_gset(rng),
        }
        .into(),
        LatticeType::GCounter => random_gcounter(rng).into(),
        LatticeType::PNCounter => PNCounter {
            increments: random_gcounter(rng),
            decrements: random_gcounter(rng),
        }
        .into(),
        LatticeType::MaxNat => MaxNat::new(rng.gen_range(0..20)).into(),
        LatticeType::Bool => BoolLattice::new(rng.gen_bool(0.5)).into(),
        LatticeType::Pair(a, b) => LatticeValue::Pair(PairValue {
            first: Box::new(random_value(a, rng)),
            second: Box::new(random_value(b, rng)),
        }),
        LatticeType::Map(v) => {
            let mut m = MapLattice::new((**v).clone());
            for k in MAP_KEYS {
                if rng.gen_bool(0.5) {
                    m.put(k, &random_value(v, rng)).expect("same value type");
                }
            }
            LatticeValue::Map(m)
        }
    }
}

/// A value `>= v`: `v` joined with a random value of the same type.
pub fn grow<R: Rng + ?Sized>(v: &LatticeValue, rng: &mut R) -> LatticeValue {
    let delta = random_value(&v.lattice_type(), rng);
    v.merge(&delta).expect("same type")
}

/// A random operation applicable to `ty`, issued at `origin`. `None` for
/// types without operations (pairs).
pub fn random_op<R: Rng + ?Sized>(ty: &LatticeType, origin: ReplicaId, rng: &mut R) -> Option<Op> {
    Some(match ty {
        LatticeType::GSet => Op::GsetAdd {
            element: random_element(rng),
        },
        LatticeType::TwoPSet => {
            let element = random_element(rng);
            if rng.gen_bool(0.6) {
                Op::TwopsetAdd { element }
            } else {
                Op::TwopsetRemove { element }
            }
        }
        LatticeType::GCounter => Op::CounterInc {
            replica: origin,
            n: rng.gen_range(1..5),
        },
        LatticeType::PNCounter => {
            let n = rng.gen_range(1..5);
            if rng.gen_bool(0.5) {
                Op::PnInc { replica: origin, n }
            } else {
                Op::PnDec { replica: origin, n }
            }
        }
        LatticeType::MaxNat => Op::MaxSet {
            value: rng.gen_range(0..20),
        },
        LatticeType::Bool => Op::BoolSet,
        LatticeType::Pair(..) => return None,
        LatticeType::Map(v) => Op::MapPut {
            key: MAP_KEYS[rng.gen_range(0..MAP_KEYS.len())].to_owned(),
            inner: Box::new(random_op(v, origin, rng)?),
        },
    })
}
