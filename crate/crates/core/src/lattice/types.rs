use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Element, Lattice};
use crate::ReplicaId;

/// Grow-only set; join is union.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GSet {
    pub elements: BTreeSet<Element>,
}

impl GSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(e: Element) -> Self {
        GSet {
            elements: BTreeSet::from([e]),
        }
    }

    pub fn insert(&mut self, e: Element) -> bool {
        self.elements.insert(e)
    }

    pub fn contains(&self, e: &Element) -> bool {
        self.elements.contains(e)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter()
    }
}

impl<E: Into<Element>> FromIterator<E> for GSet {
    fn from_iter<I: IntoIterator<Item = E>>(iter: I) -> Self {
        GSet {
            elements: iter.into_iter().map(Into::into).collect(),
        }
    }
}

impl Lattice for GSet {
    fn bottom() -> Self {
        GSet::default()
    }

    fn join(&self, other: &Self) -> Self {
        GSet {
            elements: self.elements.union(&other.elements).cloned().collect(),
        }
    }

    fn leq(&self, other: &Self) -> bool {
        self.elements.is_subset(&other.elements)
    }
}

/// Two-phase set: a pair of grow-only sets for adds and removes.
///
/// No containment constraint is placed between the two halves; removing an
/// element that was never added is legal and simply records the remove.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TwoPSet {
    pub adds: GSet,
    pub removes: GSet,
}

impl TwoPSet {
    pub fn add(&mut self, e: Element) {
        self.adds.insert(e);
    }

    pub fn remove(&mut self, e: Element) {
        self.removes.insert(e);
    }

    /// `adds - removes`. Not monotone in the lattice order.
    pub fn contents(&self) -> GSet {
        GSet {
            elements: self
                .adds
                .elements
                .difference(&self.removes.elements)
                .cloned()
                .collect(),
        }
    }
}

impl Lattice for TwoPSet {
    fn bottom() -> Self {
        TwoPSet::default()
    }

    fn join(&self, other: &Self) -> Self {
        TwoPSet {
            adds: self.adds.join(&other.adds),
            removes: self.removes.join(&other.removes),
        }
    }

    fn leq(&self, other: &Self) -> bool {
        self.adds.leq(&other.adds) && self.removes.leq(&other.removes)
    }
}

/// Grow-only counter: one monotone slot per replica, joined by pointwise max.
///
/// Zero slots are never stored, so structurally equal counters are equal
/// values.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "SlotMap", into = "SlotMap")]
pub struct GCounter {
    counts: BTreeMap<ReplicaId, u64>,
}

impl From<BTreeMap<ReplicaId, u64>> for GCounter {
    fn from(mut counts: BTreeMap<ReplicaId, u64>) -> Self {
        counts.retain(|_, v| *v > 0);
        GCounter { counts }
    }
}

impl TryFrom<SlotMap> for GCounter {
    type Error = String;

    fn try_from(m: SlotMap) -> Result<Self, String> {
        Ok(GCounter::from(m.into_replica_map()?))
    }
}

impl From<GCounter> for SlotMap {
    fn from(c: GCounter) -> Self {
        SlotMap::from_replica_map(&c.counts)
    }
}

/// Wire form of a per-replica map: object keys are decimal replica indices.
///
/// Keys are kept as strings so the map survives serde's buffering of
/// internally tagged enums.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub(crate) struct SlotMap(BTreeMap<String, u64>);

impl SlotMap {
    pub(crate) fn from_replica_map(m: &BTreeMap<ReplicaId, u64>) -> Self {
        SlotMap(m.iter().map(|(r, v)| (r.0.to_string(), *v)).collect())
    }

    pub(crate) fn into_replica_map(self) -> Result<BTreeMap<ReplicaId, u64>, String> {
        self.0
            .into_iter()
            .map(|(k, v)| {
                k.parse::<u32>()
                    .map(|r| (ReplicaId(r), v))
                    .map_err(|_| format!("invalid replica key '{k}'"))
            })
            .collect()
    }
}

impl GCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inc(&mut self, replica: ReplicaId, n: u64) {
        if n > 0 {
            *self.counts.entry(replica).or_default() += n;
        }
    }

    /// A counter whose only slot is `replica = n`.
    pub fn with_slot(replica: ReplicaId, n: u64) -> Self {
        GCounter::from(BTreeMap::from([(replica, n)]))
    }

    pub fn get(&self, replica: ReplicaId) -> u64 {
        self.counts.get(&replica).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn counts(&self) -> &BTreeMap<ReplicaId, u64> {
        &self.counts
    }
}

impl Lattice for GCounter {
    fn bottom() -> Self {
        GCounter::default()
    }

    fn join(&self, other: &Self) -> Self {
        let mut counts = self.counts.clone();
        for (r, v) in &other.counts {
            let slot = counts.entry(*r).or_default();
            *slot = (*slot).max(*v);
        }
        GCounter { counts }
    }

    fn leq(&self, other: &Self) -> bool {
        self.counts.iter().all(|(r, v)| *v <= other.get(*r))
    }
}

/// Counter supporting decrements, as a pair of grow-only counters.
///
/// [`PNCounter::value`] is not monotone under join: a state further up the
/// lattice may report a smaller value.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PNCounter {
    pub increments: GCounter,
    pub decrements: GCounter,
}

impl PNCounter {
    pub fn value(&self) -> i64 {
        self.increments.total() as i64 - self.decrements.total() as i64
    }
}

impl Lattice for PNCounter {
    fn bottom() -> Self {
        PNCounter::default()
    }

    fn join(&self, other: &Self) -> Self {
        PNCounter {
            increments: self.increments.join(&other.increments),
            decrements: self.decrements.join(&other.decrements),
        }
    }

    fn leq(&self, other: &Self) -> bool {
        self.increments.leq(&other.increments) && self.decrements.leq(&other.decrements)
    }
}

/// Natural numbers under `max`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MaxNat {
    pub value: u64,
}

impl MaxNat {
    pub fn new(value: u64) -> Self {
        MaxNat { value }
    }
}

impl Lattice for MaxNat {
    fn bottom() -> Self {
        MaxNat { value: 0 }
    }

    fn join(&self, other: &Self) -> Self {
        MaxNat {
            value: self.value.max(other.value),
        }
    }

    fn leq(&self, other: &Self) -> bool {
        self.value <= other.value
    }
}

/// Booleans ordered `false <= true`; join is OR.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BoolLattice {
    pub value: bool,
}

impl BoolLattice {
    pub fn new(value: bool) -> Self {
        BoolLattice { value }
    }
}

impl Lattice for BoolLattice {
    fn bottom() -> Self {
        BoolLattice { value: false }
    }

    fn join(&self, other: &Self) -> Self {
        BoolLattice {
            value: self.value || other.value,
        }
    }

    fn leq(&self, other: &Self) -> bool {
        !self.value || other.value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incomparable_sets() {
        let p: GSet = ["potato"].into_iter().collect();
        let f: GSet = ["ferrari"].into_iter().collect();
        let pf: GSet = ["potato", "ferrari"].into_iter().collect();
        assert!(p.leq(&pf));
        assert!(!p.leq(&f));
        assert!(!f.leq(&p));
    }

    #[test]
    fn twopset_merge_matches_pairwise_union() {
        let mut a = TwoPSet::default();
        a.add("potato".into());
        a.add("ferrari".into());
        let mut b = TwoPSet::default();
        b.remove("ferrari".into());
        let m = a.join(&b);
        assert_eq!(m.adds, ["potato", "ferrari"].into_iter().collect());
        assert_eq!(m.removes, ["ferrari"].into_iter().collect());
        assert_eq!(m.contents(), ["potato"].into_iter().collect());
    }

    #[test]
    fn remove_without_add_is_recorded() {
        let mut s = TwoPSet::default();
        s.remove("ghost".into());
        assert!(s.contents().is_empty());
        assert!(s.removes.contains(&"ghost".into()));
    }

    #[test]
    fn gcounter_drops_zero_slots() {
        let c: GCounter = serde_json::from_str(r#"{"0":0,"1":3}"#).unwrap();
        assert_eq!(c, GCounter::with_slot(ReplicaId(1), 3));
        assert_eq!(serde_json::to_string(&c).unwrap(), r#"{"1":3}"#);
    }

    #[test]
    fn pn_value_can_regress() {
        let mut lo = PNCounter::default();
        lo.increments.inc(ReplicaId(0), 2);
        let mut hi = lo.clone();
        hi.decrements.inc(ReplicaId(1), 5);
        assert!(lo.leq(&hi));
        assert!(hi.value() < lo.value());
    }

    #[test]
    fn bool_is_or() {
        let t = BoolLattice::new(true);
        let f = BoolLattice::new(false);
        assert_eq!(t.join(&f), t);
        assert!(f.leq(&t));
        assert!(!t.leq(&f));
    }
}
