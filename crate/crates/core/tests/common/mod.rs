//! Strategies and law checks shared by the property suites.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use monostore::coordination::WorkloadStats;
use monostore::lattice::{
    BoolLattice, GCounter, GSet, LatticeType, LatticeValue, MapLattice, MaxNat, PNCounter, TwoPSet,
};
use monostore::polog::{OpId, PoLog};
use monostore::replication::VersionVector;
use monostore::{Element, Lattice, Op, ReplicaId};
use proptest::collection::{btree_map, btree_set, vec};
use proptest::prelude::*;

/// Checks the semilattice laws on one triple, returning the first failure.
pub fn laws<L: Lattice + Debug>(a: &L, b: &L, c: &L) -> Result<(), String> {
    let fail = |law: &str| Err(format!("{law} fails for a={a:?} b={b:?} c={c:?}"));
    if a.join(&b.join(c)) != a.join(b).join(c) {
        return fail("associativity");
    }
    if a.join(b) != b.join(a) {
        return fail("commutativity");
    }
    if a.join(a) != *a {
        return fail("idempotence");
    }
    if a.join(&L::bottom()) != *a {
        return fail("bottom identity");
    }
    if !a.leq(&a.join(b)) || !b.leq(&a.join(b)) {
        return fail("join is an upper bound");
    }
    if a.leq(b) != (a.join(b) == *b) {
        return fail("order agrees with join");
    }
    Ok(())
}

/// Same laws for the dynamically typed values, whose merge is fallible.
pub fn value_laws(a: &LatticeValue, b: &LatticeValue, c: &LatticeValue) -> Result<(), String> {
    let m = |x: &LatticeValue, y: &LatticeValue| x.merge(y).map_err(|e| e.to_string());
    let fail = |law: &str| Err(format!("{law} fails for a={a:?} b={b:?} c={c:?}"));
    if m(a, &m(b, c)?)? != m(&m(a, b)?, c)? {
        return fail("associativity");
    }
    if m(a, b)? != m(b, a)? {
        return fail("commutativity");
    }
    if m(a, a)? != *a {
        return fail("idempotence");
    }
    if m(a, &LatticeValue::bottom(&a.lattice_type()))? != *a {
        return fail("bottom identity");
    }
    let ab = m(a, b)?;
    if !a.leq(&ab).map_err(|e| e.to_string())? {
        return fail("join is an upper bound");
    }
    Ok(())
}

pub fn element() -> impl Strategy<Value = Element> {
    prop_oneof![
        (0u8..12).prop_map(|n| Element::text(&format!("e{n}"))),
        (0usize..3, 0u64..300).prop_map(|(k, amount)| {
            let kind = ["GIFTCARD", "BOOK", "FOOD"][k];
            Element::from_json(&serde_json::json!({"type": kind, "amount": amount}))
        }),
    ]
}

pub fn gset() -> impl Strategy<Value = GSet> {
    vec(element(), 0..8).prop_map(|v| v.into_iter().collect())
}

pub fn twopset() -> impl Strategy<Value = TwoPSet> {
    (gset(), gset()).prop_map(|(adds, removes)| TwoPSet { adds, removes })
}

pub fn gcounter() -> impl Strategy<Value = GCounter> {
    btree_map(0u32..4, 1u64..50, 0..4).prop_map(|m| {
        let mut c = GCounter::new();
        for (r, n) in m {
            c.inc(ReplicaId(r), n);
        }
        c
    })
}

pub fn pncounter() -> impl Strategy<Value = PNCounter> {
    (gcounter(), gcounter()).prop_map(|(increments, decrements)| PNCounter { increments, decrements })
}

pub fn maxnat() -> impl Strategy<Value = MaxNat> {
    (0u64..100).prop_map(MaxNat::new)
}

pub fn boolean() -> impl Strategy<Value = BoolLattice> {
    any::<bool>().prop_map(BoolLattice::new)
}

pub fn map_of_counters() -> impl Strategy<Value = LatticeValue> {
    btree_map("[a-d]", gcounter(), 0..4).prop_map(|m| {
        let mut out = MapLattice::new(LatticeType::GCounter);
        for (k, v) in m {
            out.put(&k, &v.into()).expect("gcounter entries");
        }
        LatticeValue::Map(out)
    })
}

pub fn version_vector() -> impl Strategy<Value = VersionVector> {
    btree_map(0u32..4, 0u64..20, 0..4).prop_map(|m| {
        let mut vv = VersionVector::new();
        for (r, s) in m {
            vv.set(ReplicaId(r), s);
        }
        vv
    })
}

pub fn workload_stats() -> impl Strategy<Value = WorkloadStats> {
    (
        btree_map("[ab]", gcounter(), 0..3),
        btree_map("[ab]", gcounter(), 0..3),
        btree_map("[ab]", btree_set((0u32..3).prop_map(ReplicaId), 1..3), 0..3),
    )
        .prop_map(|(nonmonotone_reads, ops, escalated)| WorkloadStats {
            nonmonotone_reads,
            ops,
            escalated,
        })
}

/// A fixed history of up to six ops; predecessor sets point backwards only.
#[derive(Clone, Debug)]
pub struct History {
    pub nodes: Vec<(OpId, Op, BTreeSet<OpId>)>,
}

pub fn history(max: usize) -> impl Strategy<Value = History> {
    vec((0u32..3, any::<u8>(), element(), any::<bool>()), 0..=max).prop_map(|raw| {
        let mut seqs: BTreeMap<u32, u64> = BTreeMap::new();
        let mut nodes: Vec<(OpId, Op, BTreeSet<OpId>)> = Vec::new();
        for (origin, mask, element, add) in raw {
            let seq = seqs.entry(origin).or_default();
            *seq += 1;
            let id = OpId::new(origin, *seq);
            let preds = nodes
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, n)| n.0)
                .collect();
            let op = if add {
                Op::TwopsetAdd { element }
            } else {
                Op::TwopsetRemove { element }
            };
            nodes.push((id, op, preds));
        }
        History { nodes }
    })
}

impl History {
    /// The sub-log keeping the nodes picked by `mask` whose predecessors are
    /// also kept.
    pub fn sublog(&self, mask: u8) -> PoLog {
        let mut log = PoLog::new();
        for (i, (id, op, preds)) in self.nodes.iter().enumerate() {
            if mask & (1 << i) != 0 && preds.iter().all(|p| log.contains(*p)) {
                log.insert(op.clone(), preds, *id).expect("fresh id, present preds");
            }
        }
        log
    }
}

/// Three sub-logs of one history, so shared ids agree on their op.
pub fn polog_triple() -> impl Strategy<Value = (PoLog, PoLog, PoLog)> {
    (history(6), any::<u8>(), any::<u8>(), any::<u8>())
        .prop_map(|(h, a, b, c)| (h.sublog(a), h.sublog(b), h.sublog(c)))
}

pub const BUNDLED: [&str; 6] = ["potato_ferrari", "threshold", "rate_limiter", "bulk", "adaptive", "mixed"];

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.scn"))
}

pub fn scenario(name: &str) -> monostore::scenario::Scenario {
    let text = std::fs::read_to_string(scenario_path(name)).expect("bundled scenario");
    monostore::scenario::Scenario::parse(&text).expect("bundled scenario parses")
}

pub fn seeded(seed: u64) -> monostore::scenario::Overrides {
    monostore::scenario::Overrides {
        seed: Some(seed),
        ..Default::default()
    }
}
