//! Partially ordered operation log.
//!
//! An op-based CRDT is represented as a state-based one whose state is a
//! grow-only DAG of operation records: nodes are operations, edges are
//! happens-before. Two logs merge by union of nodes and edges. A
//! [`CausalBuffer`] holds records whose predecessors have not arrived yet, and
//! [`PoLog::replay`] folds the log into any lattice by a deterministic
//! topological order (ties broken by [`OpId`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Lattice, LatticeError, LatticeValue, Op};
use crate::ReplicaId;

/// Unique operation id: `seq` counts operations issued at `origin`, from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpId {
    pub origin: ReplicaId,
    pub seq: u64,
}

impl OpId {
    pub fn new(origin: u32, seq: u64) -> Self {
        OpId {
            origin: ReplicaId(origin),
            seq,
        }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.origin, self.seq)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LogNode {
    pub id: OpId,
    pub op: Op,
}

/// A node together with the ids it causally follows, as shipped between
/// replicas.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LogRecord {
    pub node: LogNode,
    pub preds: BTreeSet<OpId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoLogError {
    #[error("operation {0} is already in the log")]
    DuplicateId(OpId),
    #[error("predecessor {0} is not in the log")]
    UnknownPredecessor(OpId),
    #[error("edge {0} -> {1} references a missing node")]
    DanglingEdge(OpId, OpId),
    #[error("happens-before relation has a cycle")]
    CycleDetected,
    #[error("{0:?} is not a topological order of the log")]
    NotTopological(Vec<OpId>),
    #[error(transparent)]
    Interpreter(#[from] LatticeError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoLog {
    nodes: BTreeSet<LogNode>,
    edges: BTreeSet<(OpId, OpId)>,
}

impl Lattice for PoLog {
    fn bottom() -> Self {
        PoLog::default()
    }

    fn join(&self, other: &Self) -> Self {
        PoLog {
            nodes: self.nodes.union(&other.nodes).cloned().collect(),
            edges: self.edges.union(&other.edges).copied().collect(),
        }
    }

    fn leq(&self, other: &Self) -> bool {
        self.nodes.is_subset(&other.nodes) && self.edges.is_subset(&other.edges)
    }
}

impl PoLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &BTreeSet<LogNode> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(OpId, OpId)> {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: OpId) -> bool {
        self.node(id).is_some()
    }

    pub fn node(&self, id: OpId) -> Option<&LogNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    fn ids(&self) -> BTreeSet<OpId> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    /// Returns a new log with `op` appended after every id in `frontier`.
    pub fn record(&self, op: Op, frontier: &BTreeSet<OpId>, new_id: OpId) -> Result<PoLog, PoLogError> {
        let mut out = self.clone();
        out.insert(op, frontier, new_id)?;
        Ok(out)
    }

    /// In-place form of [`PoLog::record`].
    pub fn insert(&mut self, op: Op, preds: &BTreeSet<OpId>, new_id: OpId) -> Result<(), PoLogError> {
        let ids = self.ids();
        if ids.contains(&new_id) {
            return Err(PoLogError::DuplicateId(new_id));
        }
        if let Some(p) = preds.iter().find(|p| !ids.contains(p)) {
            return Err(PoLogError::UnknownPredecessor(*p));
        }
        self.nodes.insert(LogNode { id: new_id, op });
        self.edges.extend(preds.iter().map(|p| (*p, new_id)));
        Ok(())
    }

    /// Nodes with no successor.
    pub fn causal_frontier(&self) -> BTreeSet<OpId> {
        let has_succ: BTreeSet<OpId> = self.edges.iter().map(|(from, _)| *from).collect();
        self.nodes
            .iter()
            .map(|n| n.id)
            .filter(|id| !has_succ.contains(id))
            .collect()
    }

    /// Direct predecessors of every node.
    pub fn predecessors(&self) -> BTreeMap<OpId, BTreeSet<OpId>> {
        let mut preds: BTreeMap<OpId, BTreeSet<OpId>> =
            self.nodes.iter().map(|n| (n.id, BTreeSet::new())).collect();
        for (from, to) in &self.edges {
            preds.entry(*to).or_default().insert(*from);
        }
        preds
    }

    fn check_edges(&self) -> Result<(), PoLogError> {
        let ids = self.ids();
        match self
            .edges
            .iter()
            .find(|(a, b)| !ids.contains(a) || !ids.contains(b))
        {
            Some((a, b)) => Err(PoLogError::DanglingEdge(*a, *b)),
            None => Ok(()),
        }
    }

    /// Topological order; among ready nodes the smallest [`OpId`] goes first.
    pub fn topological_order(&self) -> Result<Vec<&LogNode>, PoLogError> {
        self.check_edges()?;
        let mut indegree: BTreeMap<OpId, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        let mut succs: BTreeMap<OpId, Vec<OpId>> = BTreeMap::new();
        for (from, to) in &self.edges {
            *indegree.get_mut(to).expect("edges checked") += 1;
            succs.entry(*from).or_default().push(*to);
        }
        let by_id: BTreeMap<OpId, &LogNode> = self.nodes.iter().map(|n| (n.id, n)).collect();
        let mut ready: BTreeSet<OpId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_first() {
            order.push(by_id[&id]);
            for s in succs.get(&id).into_iter().flatten() {
                let d = indegree.get_mut(s).expect("edges checked");
                *d -= 1;
                if *d == 0 {
                    ready.insert(*s);
                }
            }
        }
        if order.len() != by_id.len() {
            return Err(PoLogError::CycleDetected);
        }
        Ok(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_ok()
    }

    /// Folds the log into a lattice value along [`PoLog::topological_order`].
    ///
    /// `interpret` maps the current state and a node to the delta to merge.
    pub fn replay<F>(&self, bottom: LatticeValue, interpret: F) -> Result<LatticeValue, PoLogError>
    where
        F: FnMut(&LatticeValue, &LogNode) -> Result<LatticeValue, LatticeError>,
    {
        let order = self.topological_order()?;
        fold(order, bottom, interpret)
    }

    /// Folds along a caller-chosen order, which must be a topological order
    /// covering every node exactly once.
    pub fn replay_in_order<F>(
        &self,
        order: &[OpId],
        bottom: LatticeValue,
        interpret: F,
    ) -> Result<LatticeValue, PoLogError>
    where
        F: FnMut(&LatticeValue, &LogNode) -> Result<LatticeValue, LatticeError>,
    {
        self.check_edges()?;
        let position: BTreeMap<OpId, usize> =
            order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let valid = position.len() == order.len()
            && position.len() == self.nodes.len()
            && self.nodes.iter().all(|n| position.contains_key(&n.id))
            && self.edges.iter().all(|(a, b)| position[a] < position[b]);
        if !valid {
            return Err(PoLogError::NotTopological(order.to_vec()));
        }
        let by_id: BTreeMap<OpId, &LogNode> = self.nodes.iter().map(|n| (n.id, n)).collect();
        fold(order.iter().map(|id| by_id[id]), bottom, interpret)
    }
}

fn fold<'a, I, F>(nodes: I, bottom: LatticeValue, mut interpret: F) -> Result<LatticeValue, PoLogError>
where
    I: IntoIterator<Item = &'a LogNode>,
    F: FnMut(&LatticeValue, &LogNode) -> Result<LatticeValue, LatticeError>,
{
    let mut state = bottom;
    for node in nodes {
        let delta = interpret(&state, node)?;
        state = state.merge(&delta)?;
    }
    Ok(state)
}

/// Default interpreter: the node's operation delta against the current state.
pub fn op_interpreter(state: &LatticeValue, node: &LogNode) -> Result<LatticeValue, LatticeError> {
    node.op.delta_against(state)
}

/// Records waiting for their predecessors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CausalBuffer {
    pending: BTreeMap<OpId, LogRecord>,
}

impl CausalBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pending(&self) -> impl Iterator<Item = &LogRecord> {
        self.pending.values()
    }

    /// Delivers `record` into `log` if its predecessors are present,
    /// otherwise buffers it. Returns the ids that entered the log, in order,
    /// including any buffered records released by this arrival.
    pub fn deliver(&mut self, log: &mut PoLog, record: LogRecord) -> Vec<OpId> {
        let id = record.node.id;
        if log.contains(id) || self.pending.contains_key(&id) {
            return Vec::new();
        }
        self.pending.insert(id, record);
        let mut delivered = Vec::new();
        loop {
            let ready = self
                .pending
                .values()
                .find(|r| r.preds.iter().all(|p| log.contains(*p)))
                .map(|r| r.node.id);
            let Some(ready) = ready else { break };
            let r = self.pending.remove(&ready).expect("found above");
            log.insert(r.node.op, &r.preds, ready)
                .expect("predecessors present and id fresh");
            delivered.push(ready);
        }
        delivered
    }
}

/// Functional form: returns the updated buffer and log.
pub fn deliver(buffer: &CausalBuffer, log: &PoLog, record: LogRecord) -> (CausalBuffer, PoLog) {
    let mut b = buffer.clone();
    let mut l = log.clone();
    b.deliver(&mut l, record);
    (b, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{GSet, LatticeType, TwoPSet};
    use crate::Element;

    fn add(x: &str) -> Op {
        Op::TwopsetAdd { element: Element::text(x) }
    }

    fn remove(x: &str) -> Op {
        Op::TwopsetRemove { element: Element::text(x) }
    }

    fn ids(v: &[OpId]) -> BTreeSet<OpId> {
        v.iter().copied().collect()
    }

    #[test]
    fn record_on_empty_log() {
        let log = PoLog::new().record(add("x"), &BTreeSet::new(), OpId::new(0, 1)).unwrap();
        assert_eq!(log.len(), 1);
        assert!(log.edges().is_empty());
    }

    #[test]
    fn record_add_then_remove() {
        let a = OpId::new(0, 1);
        let r = OpId::new(0, 2);
        let log = PoLog::new()
            .record(add("x"), &BTreeSet::new(), a)
            .unwrap()
            .record(remove("x"), &ids(&[a]), r)
            .unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.edges().iter().copied().collect::<Vec<_>>(), vec![(a, r)]);
    }

    #[test]
    fn record_errors() {
        let a = OpId::new(0, 1);
        let log = PoLog::new().record(add("x"), &BTreeSet::new(), a).unwrap();
        assert_eq!(
            log.record(add("y"), &BTreeSet::new(), a),
            Err(PoLogError::DuplicateId(a))
        );
        let ghost = OpId::new(3, 9);
        assert_eq!(
            log.record(add("y"), &ids(&[ghost]), OpId::new(0, 2)),
            Err(PoLogError::UnknownPredecessor(ghost))
        );
    }

    #[test]
    fn frontier_of_chain_and_branches() {
        assert!(PoLog::new().causal_frontier().is_empty());
        let (a, b, c) = (OpId::new(0, 1), OpId::new(0, 2), OpId::new(0, 3));
        let chain = PoLog::new()
            .record(add("a"), &BTreeSet::new(), a)
            .unwrap()
            .record(add("b"), &ids(&[a]), b)
            .unwrap()
            .record(add("c"), &ids(&[b]), c)
            .unwrap();
        assert_eq!(chain.causal_frontier(), ids(&[c]));

        let (x, y) = (OpId::new(1, 1), OpId::new(2, 1));
        let branches = PoLog::new()
            .record(add("a"), &BTreeSet::new(), a)
            .unwrap()
            .record(add("x"), &ids(&[a]), x)
            .unwrap()
            .record(add("y"), &ids(&[a]), y)
            .unwrap();
        assert_eq!(branches.causal_frontier(), ids(&[x, y]));
    }

    #[test]
    fn remove_before_add_is_buffered() {
        let a = OpId::new(0, 1);
        let r = OpId::new(0, 2);
        let rec_add = LogRecord { node: LogNode { id: a, op: add("ferrari") }, preds: BTreeSet::new() };
        let rec_rm = LogRecord { node: LogNode { id: r, op: remove("ferrari") }, preds: ids(&[a]) };
        let mut buf = CausalBuffer::new();
        let mut log = PoLog::new();
        assert!(buf.deliver(&mut log, rec_rm.clone()).is_empty());
        assert_eq!(buf.len(), 1);
        assert!(log.is_empty());
        assert_eq!(buf.deliver(&mut log, rec_add.clone()), vec![a, r]);
        assert!(buf.is_empty());
        assert_eq!(log.len(), 2);
        // duplicates are no-ops
        let (b2, l2) = deliver(&buf, &log, rec_rm);
        assert_eq!((b2, l2), (buf, log));
    }

    #[test]
    fn replay_example_chain() {
        let (p, f, r) = (OpId::new(0, 1), OpId::new(0, 2), OpId::new(0, 3));
        let log = PoLog::new()
            .record(add("potato"), &BTreeSet::new(), p)
            .unwrap()
            .record(add("ferrari"), &ids(&[p]), f)
            .unwrap()
            .record(remove("ferrari"), &ids(&[f]), r)
            .unwrap();
        let out = log
            .replay(LatticeValue::bottom(&LatticeType::TwoPSet), op_interpreter)
            .unwrap();
        let expect = TwoPSet {
            adds: ["potato", "ferrari"].into_iter().collect::<GSet>(),
            removes: ["ferrari"].into_iter().collect(),
        };
        assert_eq!(out, expect.into());
        assert_eq!(
            PoLog::new()
                .replay(LatticeValue::bottom(&LatticeType::TwoPSet), op_interpreter)
                .unwrap(),
            LatticeValue::bottom(&LatticeType::TwoPSet)
        );
    }

    #[test]
    fn cycles_and_dangling_edges_are_errors() {
        let (a, b) = (OpId::new(0, 1), OpId::new(0, 2));
        let mut log = PoLog::new()
            .record(add("a"), &BTreeSet::new(), a)
            .unwrap()
            .record(add("b"), &ids(&[a]), b)
            .unwrap();
        log.edges.insert((b, a));
        assert_eq!(log.topological_order().unwrap_err(), PoLogError::CycleDetected);
        let mut dangling = PoLog::new();
        dangling.edges.insert((a, b));
        assert!(matches!(
            dangling.topological_order(),
            Err(PoLogError::DanglingEdge(..))
        ));
    }

    #[test]
    fn replay_in_order_rejects_non_topological() {
        let (a, b) = (OpId::new(0, 1), OpId::new(0, 2));
        let log = PoLog::new()
            .record(add("a"), &BTreeSet::new(), a)
            .unwrap()
            .record(remove("a"), &ids(&[a]), b)
            .unwrap();
        let bottom = LatticeValue::bottom(&LatticeType::TwoPSet);
        assert!(log.replay_in_order(&[b, a], bottom.clone(), op_interpreter).is_err());
        assert!(log.replay_in_order(&[a], bottom.clone(), op_interpreter).is_err());
        assert!(log.replay_in_order(&[a, b], bottom, op_interpreter).is_ok());
    }

    #[test]
    fn canonical_form_round_trips() {
        let a = OpId::new(0, 1);
        let log = PoLog::new()
            .record(add("a"), &BTreeSet::new(), a)
            .unwrap()
            .record(add("b"), &ids(&[a]), OpId::new(1, 1))
            .unwrap();
        let text = serde_json::to_string(&log).unwrap();
        assert_eq!(serde_json::from_str::<PoLog>(&text).unwrap(), log);
    }
}
