//! Read/write coordination for non-monotone queries.
//!
//! A write strategy fixes how many replicas must merge a delta before the
//! write is acknowledged, a read strategy how many replica states are joined
//! before a non-monotone query is evaluated. When the two sizes sum past the
//! replica count every read set meets every write set, so a read issued
//! after an acknowledged write sees it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::lattice::{GCounter, Lattice};
use crate::query::{QueryError, QueryValue};
use crate::{ReplicaId, Store};

pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordinationError {
    #[error("unknown strategy '{0}'")]
    UnknownStrategy(String),
    #[error("quorum size {k} is outside 1..={n}")]
    BadQuorum { k: usize, n: usize },
    #[error("unavailable: {reached} of {needed} replicas responded")]
    Unavailable { needed: usize, reached: usize },
    #[error(transparent)]
    Query(#[from] QueryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WriteStrategy {
    WriteOne,
    WriteQuorum(usize),
    WriteAll,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReadStrategy {
    ReadOne,
    ReadQuorum(usize),
    ReadAll,
}

fn quorum(text: &str, prefix: &str) -> Option<Result<usize, CoordinationError>> {
    let k = text.strip_prefix(prefix)?;
    Some(
        k.parse::<usize>()
            .map_err(|_| CoordinationError::UnknownStrategy(text.to_owned())),
    )
}

impl FromStr for WriteStrategy {
    type Err = CoordinationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "write_one" => Ok(WriteStrategy::WriteOne),
            "write_all" => Ok(WriteStrategy::WriteAll),
            _ => match quorum(s, "write_quorum:") {
                Some(k) => Ok(WriteStrategy::WriteQuorum(k?)),
                None => Err(CoordinationError::UnknownStrategy(s.to_owned())),
            },
        }
    }
}

impl FromStr for ReadStrategy {
    type Err = CoordinationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read_one" => Ok(ReadStrategy::ReadOne),
            "read_all" => Ok(ReadStrategy::ReadAll),
            _ => match quorum(s, "read_quorum:") {
                Some(k) => Ok(ReadStrategy::ReadQuorum(k?)),
                None => Err(CoordinationError::UnknownStrategy(s.to_owned())),
            },
        }
    }
}

impl fmt::Display for WriteStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WriteStrategy::WriteOne => f.write_str("write_one"),
            WriteStrategy::WriteQuorum(k) => write!(f, "write_quorum:{k}"),
            WriteStrategy::WriteAll => f.write_str("write_all"),
        }
    }
}

impl fmt::Display for ReadStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReadStrategy::ReadOne => f.write_str("read_one"),
            ReadStrategy::ReadQuorum(k) => write!(f, "read_quorum:{k}"),
            ReadStrategy::ReadAll => f.write_str("read_all"),
        }
    }
}

macro_rules! string_serde {
    ($($t:ty),*) => {$(
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    )*};
}

string_serde!(WriteStrategy, ReadStrategy, Choice<WriteStrategy>, Choice<ReadStrategy>);

fn check_k(k: usize, n: usize) -> Result<(), CoordinationError> {
    if (1..=n).contains(&k) {
        Ok(())
    } else {
        Err(CoordinationError::BadQuorum { k, n })
    }
}

impl WriteStrategy {
    pub fn size(self, n: usize) -> usize {
        match self {
            WriteStrategy::WriteOne => 1,
            WriteStrategy::WriteQuorum(k) => k,
            WriteStrategy::WriteAll => n,
        }
    }

    pub fn validate(self, n: usize) -> Result<(), CoordinationError> {
        check_k(self.size(n), n)
    }
}

impl ReadStrategy {
    pub fn size(self, n: usize) -> usize {
        match self {
            ReadStrategy::ReadOne => 1,
            ReadStrategy::ReadQuorum(k) => k,
            ReadStrategy::ReadAll => n,
        }
    }

    pub fn validate(self, n: usize) -> Result<(), CoordinationError> {
        check_k(self.size(n), n)
    }
}

/// A fixed strategy, or one picked per operation from workload statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Choice<S> {
    Fixed(S),
    Adaptive,
}

impl<S: FromStr<Err = CoordinationError>> FromStr for Choice<S> {
    type Err = CoordinationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "adaptive" {
            Ok(Choice::Adaptive)
        } else {
            s.parse().map(Choice::Fixed)
        }
    }
}

impl<S: fmt::Display> fmt::Display for Choice<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Fixed(s) => s.fmt(f),
            Choice::Adaptive => f.write_str("adaptive"),
        }
    }
}

pub fn overlap_safe(ws: WriteStrategy, rs: ReadStrategy, n: usize) -> bool {
    ws.size(n) + rs.size(n) > n
}

/// The `size` replicas starting at `first` and wrapping around.
pub fn targets(first: ReplicaId, size: usize, n: usize) -> Vec<ReplicaId> {
    (0..size.min(n))
        .map(|i| ReplicaId(((first.index() + i) % n) as u32))
        .collect()
}

/// Per-key counts of operations and non-monotone query invocations. Both are
/// grow-only counters, so the statistics gossip like any other state.
///
/// `escalated` records, per key, the replicas that have switched to
/// synchronous writes. It only grows.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadStats {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub nonmonotone_reads: BTreeMap<String, GCounter>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ops: BTreeMap<String, GCounter>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub escalated: BTreeMap<String, BTreeSet<ReplicaId>>,
}

fn join_maps(a: &BTreeMap<String, GCounter>, b: &BTreeMap<String, GCounter>) -> BTreeMap<String, GCounter> {
    let mut out = a.clone();
    for (k, v) in b {
        let slot = out.entry(k.clone()).or_default();
        *slot = slot.join(v);
    }
    out
}

impl Lattice for WorkloadStats {
    fn bottom() -> Self {
        WorkloadStats::default()
    }

    fn join(&self, other: &Self) -> Self {
        let mut escalated = self.escalated.clone();
        for (k, set) in &other.escalated {
            escalated.entry(k.clone()).or_default().extend(set.iter().copied());
        }
        WorkloadStats {
            nonmonotone_reads: join_maps(&self.nonmonotone_reads, &other.nonmonotone_reads),
            ops: join_maps(&self.ops, &other.ops),
            escalated,
        }
    }
}

impl WorkloadStats {
    pub fn is_empty(&self) -> bool {
        self.nonmonotone_reads.is_empty() && self.ops.is_empty() && self.escalated.is_empty()
    }

    pub fn record_op(&mut self, key: &str, at: ReplicaId) {
        self.ops.entry(key.to_owned()).or_default().inc(at, 1);
    }

    pub fn record_nonmonotone_read(&mut self, key: &str, at: ReplicaId) {
        self.nonmonotone_reads.entry(key.to_owned()).or_default().inc(at, 1);
    }

    fn total(m: &BTreeMap<String, GCounter>, key: &str) -> u64 {
        m.get(key).map_or(0, GCounter::total)
    }

    /// Non-monotone reads per op on `key`; reads with no ops count as one op.
    pub fn ratio(&self, key: &str) -> f64 {
        let reads = Self::total(&self.nonmonotone_reads, key) as f64;
        let ops = Self::total(&self.ops, key).max(1) as f64;
        reads / ops
    }
}

/// Default strategies for a run. `theta` is the adaptive switch point in
/// non-monotone reads per op.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Policy {
    pub write: Choice<WriteStrategy>,
    pub read: Choice<ReadStrategy>,
    pub theta: f64,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            write: Choice::Fixed(WriteStrategy::WriteOne),
            read: Choice::Fixed(ReadStrategy::ReadAll),
            theta: DEFAULT_THETA,
        }
    }
}

/// Read-heavy keys shift the cost to writes; everything else reads all.
pub fn adaptive_strategy(stats: &WorkloadStats, key: &str, theta: f64) -> (WriteStrategy, ReadStrategy) {
    if stats.ratio(key) > theta {
        (WriteStrategy::WriteAll, ReadStrategy::ReadOne)
    } else {
        (WriteStrategy::WriteOne, ReadStrategy::ReadAll)
    }
}

/// Write strategy for an adaptive write at `at`.
///
/// A replica whose statistics cross `theta` escalates for good and writes to
/// all replicas from then on. Because the switch never reverts, a stale view
/// elsewhere can delay escalation but never undo it.
pub fn adaptive_write(stats: &mut WorkloadStats, key: &str, at: ReplicaId, theta: f64) -> WriteStrategy {
    if adaptive_strategy(stats, key, theta).0 == WriteStrategy::WriteAll {
        stats.escalated.entry(key.to_owned()).or_default().insert(at);
    }
    if stats.escalated.get(key).is_some_and(|s| s.contains(&at)) {
        WriteStrategy::WriteAll
    } else {
        WriteStrategy::WriteOne
    }
}

/// Read strategy for an adaptive non-monotone read at `at`.
///
/// Reading one replica is only safe once every replica writes to all, so
/// `ReadOne` waits until all `n` replicas appear in the escalation set.
/// Whoever sends that knowledge has also sent every write it saw before
/// escalating, so the local state already holds them.
pub fn adaptive_read(stats: &mut WorkloadStats, key: &str, at: ReplicaId, n: usize, theta: f64) -> ReadStrategy {
    if adaptive_strategy(stats, key, theta).0 == WriteStrategy::WriteAll {
        stats.escalated.entry(key.to_owned()).or_default().insert(at);
    }
    if stats.escalated.get(key).is_some_and(|s| s.len() >= n) {
        ReadStrategy::ReadOne
    } else {
        ReadStrategy::ReadAll
    }
}

/// Joins the key states of the replicas `rs` selects, starting at `reader`,
/// and evaluates `eval` on the join. `reachable[i]` says whether replica `i`
/// answers.
pub fn coordinated_read<F>(
    rs: ReadStrategy,
    reader: ReplicaId,
    stores: &[Store],
    reachable: &[bool],
    eval: F,
) -> Result<QueryValue, CoordinationError>
where
    F: Fn(&Store) -> Result<QueryValue, QueryError>,
{
    let n = stores.len();
    rs.validate(n)?;
    let chosen = targets(reader, rs.size(n), n);
    let reached: Vec<&Store> = chosen
        .iter()
        .filter(|r| reachable.get(r.index()).copied().unwrap_or(false))
        .map(|r| &stores[r.index()])
        .collect();
    if reached.len() < chosen.len() {
        return Err(CoordinationError::Unavailable {
            needed: chosen.len(),
            reached: reached.len(),
        });
    }
    let mut joined = reached[0].clone();
    for s in &reached[1..] {
        joined.merge_in(s).map_err(QueryError::from)?;
    }
    Ok(eval(&joined)?)
}
