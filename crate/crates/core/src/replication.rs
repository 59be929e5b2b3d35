//! Per-replica state machine: local ops, full and delta gossip, pruning.
//!
//! Every local op becomes an [`OpRecord`] carrying its lattice delta. A
//! replica's version vector counts, per origin, the contiguous prefix of
//! records reflected in its store. Delta gossip ships the buffered records a
//! peer has not acknowledged, joined into one [`DeltaGroup`] per origin; full
//! gossip ships the whole store. Every payload carries the sender's version
//! vector, which doubles as an ack.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordination::WorkloadStats;
use crate::lattice::{Lattice, LatticeError, LatticeType, LatticeValue, Op, SlotMap};
use crate::polog::{op_interpreter, CausalBuffer, LogNode, LogRecord, OpId, PoLog, PoLogError};
use crate::{ReplicaId, Store};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplicationError {
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Log(#[from] PoLogError),
}

/// Highest contiguous sequence number seen per origin. Zero entries are not
/// stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SlotMap", into = "SlotMap")]
pub struct VersionVector {
    entries: BTreeMap<ReplicaId, u64>,
}

impl TryFrom<SlotMap> for VersionVector {
    type Error = String;

    fn try_from(m: SlotMap) -> Result<Self, String> {
        let mut entries = m.into_replica_map()?;
        entries.retain(|_, v| *v > 0);
        Ok(VersionVector { entries })
    }
}

impl From<VersionVector> for SlotMap {
    fn from(v: VersionVector) -> Self {
        SlotMap::from_replica_map(&v.entries)
    }
}

impl Lattice for VersionVector {
    fn bottom() -> Self {
        VersionVector::default()
    }

    fn join(&self, other: &Self) -> Self {
        let mut entries = self.entries.clone();
        for (r, s) in &other.entries {
            let e = entries.entry(*r).or_default();
            *e = (*e).max(*s);
        }
        VersionVector { entries }
    }

    fn leq(&self, other: &Self) -> bool {
        other.dominates(self)
    }
}

impl VersionVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, r: ReplicaId) -> u64 {
        self.entries.get(&r).copied().unwrap_or(0)
    }

    pub fn set(&mut self, r: ReplicaId, seq: u64) {
        if seq == 0 {
            self.entries.remove(&r);
        } else {
            self.entries.insert(r, seq);
        }
    }

    pub fn entries(&self) -> &BTreeMap<ReplicaId, u64> {
        &self.entries
    }

    /// Pointwise `>=`.
    pub fn dominates(&self, other: &VersionVector) -> bool {
        other.entries.iter().all(|(r, s)| self.get(*r) >= *s)
    }

    pub fn includes(&self, id: OpId) -> bool {
        self.get(id.origin) >= id.seq
    }

    /// Pointwise minimum; empty input gives the zero vector.
    pub fn meet_all<'a>(vvs: impl IntoIterator<Item = &'a VersionVector>) -> VersionVector {
        let mut it = vvs.into_iter();
        let Some(first) = it.next() else {
            return VersionVector::default();
        };
        let mut entries = first.entries.clone();
        for v in it {
            entries = entries
                .into_iter()
                .map(|(r, s)| (r, s.min(v.get(r))))
                .filter(|(_, s)| *s > 0)
                .collect();
        }
        VersionVector { entries }
    }

    /// Ids in `self` but not in `older`, by origin then seq.
    pub fn diff(&self, older: &VersionVector) -> Vec<OpId> {
        self.entries
            .iter()
            .flat_map(|(r, s)| ((older.get(*r) + 1)..=*s).map(move |q| OpId { origin: *r, seq: q }))
            .collect()
    }
}

/// One local operation: its id, key and lattice delta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub id: OpId,
    pub key: String,
    pub delta: LatticeValue,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub predecessors: BTreeSet<OpId>,
    /// Present only when the op log is mirrored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<Op>,
}

/// A mirrored op as carried inside a [`DeltaGroup`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub key: String,
    pub op: Op,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub preds: BTreeSet<OpId>,
}

/// Records `first..=last` of one origin with their deltas joined per key.
///
/// Joining is what makes a group cheaper than its records, and it is safe
/// because applying a delta twice is a no-op. A receiver whose version vector
/// has reached `first - 1` can apply the whole group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaGroup {
    pub origin: ReplicaId,
    pub first: u64,
    pub last: u64,
    pub deltas: BTreeMap<String, LatticeValue>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub log: BTreeMap<OpId, LogEntry>,
}

impl DeltaGroup {
    fn of_record(r: &OpRecord) -> DeltaGroup {
        DeltaGroup {
            origin: r.id.origin,
            first: r.id.seq,
            last: r.id.seq,
            deltas: BTreeMap::from([(r.key.clone(), r.delta.clone())]),
            log: r
                .op
                .iter()
                .map(|op| {
                    let entry = LogEntry {
                        key: r.key.clone(),
                        op: op.clone(),
                        preds: r.predecessors.clone(),
                    };
                    (r.id, entry)
                })
                .collect(),
        }
    }

    /// Covers both ranges. Only meaningful for groups of the same origin
    /// whose ranges touch or overlap.
    fn absorb(&mut self, other: &DeltaGroup) -> Result<(), LatticeError> {
        self.first = self.first.min(other.first);
        self.last = self.last.max(other.last);
        for (k, d) in &other.deltas {
            let joined = match self.deltas.get(k) {
                Some(mine) => mine.merge(d)?,
                None => d.clone(),
            };
            self.deltas.insert(k.clone(), joined);
        }
        for (id, e) in &other.log {
            self.log.entry(*id).or_insert_with(|| e.clone());
        }
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = OpId> + '_ {
        (self.first..=self.last).map(|seq| OpId {
            origin: self.origin,
            seq,
        })
    }
}

/// Gossip message body. `vv` is the sender's version vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Payload {
    Full {
        from: ReplicaId,
        store: Store,
        vv: VersionVector,
        #[serde(default, skip_serializing_if = "WorkloadStats::is_empty")]
        stats: WorkloadStats,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        logs: Option<BTreeMap<String, PoLog>>,
    },
    Delta {
        from: ReplicaId,
        groups: Vec<DeltaGroup>,
        vv: VersionVector,
        #[serde(default, skip_serializing_if = "WorkloadStats::is_empty")]
        stats: WorkloadStats,
    },
}

impl Payload {
    pub fn from(&self) -> ReplicaId {
        match self {
            Payload::Full { from, .. } | Payload::Delta { from, .. } => *from,
        }
    }

    pub fn vv(&self) -> &VersionVector {
        match self {
            Payload::Full { vv, .. } | Payload::Delta { vv, .. } => vv,
        }
    }

    pub fn to_canonical(&self) -> String {
        serde_json::to_string(self).expect("payloads always serialize")
    }

    /// Size on the wire: length of the canonical serialization.
    pub fn bytes(&self) -> usize {
        self.to_canonical().len()
    }

    pub fn decode(text: &str) -> Result<Payload, ReplicationError> {
        let p: Payload = serde_json::from_str(text).map_err(|e| ReplicationError::Malformed(e.to_string()))?;
        if let Payload::Delta { groups, .. } = &p {
            if let Some(g) = groups.iter().find(|g| g.first == 0 || g.first > g.last) {
                return Err(ReplicationError::Malformed(format!(
                    "group {}..{} from {} is empty or starts at 0",
                    g.first, g.last, g.origin
                )));
            }
        }
        Ok(p)
    }
}

/// Op-based mirror of one key: the log plus records waiting on predecessors.
#[derive(Clone, Debug, Default, PartialEq)]
struct KeyLog {
    log: PoLog,
    buffer: CausalBuffer,
}

#[derive(Clone, Debug)]
pub struct Replica {
    pub id: ReplicaId,
    n_replicas: usize,
    store: Store,
    vv: VersionVector,
    /// Applied groups some peer may still lack, in arrival order.
    delta_buffer: Vec<DeltaGroup>,
    /// Groups that arrived before an earlier record from the same origin.
    gaps: Vec<DeltaGroup>,
    acks: BTreeMap<ReplicaId, VersionVector>,
    logs: Option<BTreeMap<String, KeyLog>>,
    pub stats: WorkloadStats,
}

impl Replica {
    pub fn new(id: ReplicaId, n_replicas: usize, schema: &BTreeMap<String, LatticeType>, op_log: bool) -> Replica {
        Replica {
            id,
            n_replicas,
            store: Store::new(schema.iter().map(|(k, t)| (k.as_str(), t))),
            vv: VersionVector::new(),
            delta_buffer: Vec::new(),
            gaps: Vec::new(),
            acks: BTreeMap::new(),
            logs: op_log.then(|| schema.keys().map(|k| (k.clone(), KeyLog::default())).collect()),
            stats: WorkloadStats::default(),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn vv(&self) -> &VersionVector {
        &self.vv
    }

    pub fn delta_buffer(&self) -> &[DeltaGroup] {
        &self.delta_buffer
    }

    /// Ids of every record still buffered.
    pub fn buffered_ids(&self) -> BTreeSet<OpId> {
        self.delta_buffer.iter().flat_map(|g| g.ids()).collect()
    }

    pub fn ack(&self, peer: ReplicaId) -> VersionVector {
        self.acks.get(&peer).cloned().unwrap_or_default()
    }

    pub fn log(&self, key: &str) -> Option<&PoLog> {
        self.logs.as_ref()?.get(key).map(|k| &k.log)
    }

    fn peers(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        (0..self.n_replicas as u32).map(ReplicaId).filter(move |r| *r != self.id)
    }

    /// Applies `op` to `key` and returns the new record.
    pub fn apply_local_op(&mut self, key: &str, op: &Op) -> Result<OpRecord, ReplicationError> {
        if self.store.get(key).is_none() {
            return Err(ReplicationError::UnknownKey(key.to_owned()));
        }
        let delta = self.store.delta_for(key, op)?;
        let id = OpId {
            origin: self.id,
            seq: self.vv.get(self.id) + 1,
        };
        let mut predecessors = BTreeSet::new();
        let mut mirrored = None;
        if let Some(logs) = &mut self.logs {
            let kl = logs.get_mut(key).expect("logs cover the schema");
            predecessors = kl.log.causal_frontier();
            kl.log.insert(op.clone(), &predecessors, id)?;
            mirrored = Some(op.clone());
        }
        self.store.apply(key, &delta)?;
        self.vv.set(self.id, id.seq);
        self.stats.record_op(key, self.id);
        let record = OpRecord {
            id,
            key: key.to_owned(),
            delta,
            predecessors,
            op: mirrored,
        };
        self.delta_buffer.push(DeltaGroup::of_record(&record));
        Ok(record)
    }

    pub fn full_gossip_payload(&self) -> Payload {
        Payload::Full {
            from: self.id,
            store: self.store.clone(),
            vv: self.vv.clone(),
            stats: self.stats.clone(),
            logs: self
                .logs
                .as_ref()
                .map(|l| l.iter().map(|(k, kl)| (k.clone(), kl.log.clone())).collect()),
        }
    }

    /// Buffered records the holder of `peer_vv` has not seen, one joined
    /// group per origin. Empty when the peer is current.
    pub fn delta_gossip_payload(&self, peer_vv: &VersionVector) -> Payload {
        let mut per_origin: BTreeMap<ReplicaId, DeltaGroup> = BTreeMap::new();
        for g in self.delta_buffer.iter().filter(|g| g.last > peer_vv.get(g.origin)) {
            match per_origin.get_mut(&g.origin) {
                Some(acc) => acc.absorb(g).expect("buffered deltas share the schema"),
                None => {
                    per_origin.insert(g.origin, g.clone());
                }
            }
        }
        Payload::Delta {
            from: self.id,
            groups: per_origin.into_values().collect(),
            vv: self.vv.clone(),
            stats: self.stats.clone(),
        }
    }

    /// Delta payload addressed by what `peer` last acknowledged.
    pub fn delta_payload_for(&self, peer: ReplicaId) -> Payload {
        self.delta_gossip_payload(&self.ack(peer))
    }

    /// Merges a payload. Returns the ids that became visible here.
    pub fn receive_gossip(&mut self, payload: &Payload) -> Result<Vec<OpId>, ReplicationError> {
        let before = self.vv.clone();
        let from = payload.from();
        if from != self.id {
            let ack = self.acks.entry(from).or_default();
            *ack = ack.join(payload.vv());
        }
        match payload {
            Payload::Full {
                store, vv, stats, logs, ..
            } => {
                self.store.merge_in(store)?;
                self.vv = self.vv.join(vv);
                self.stats = self.stats.join(stats);
                let vv = &self.vv;
                self.gaps.retain(|g| g.last > vv.get(g.origin));
                if let (Some(mine), Some(theirs)) = (&mut self.logs, logs) {
                    for (k, kl) in mine.iter_mut() {
                        if let Some(l) = theirs.get(k) {
                            kl.log = kl.log.join(l);
                            let pending: Vec<LogRecord> = kl.buffer.pending().cloned().collect();
                            kl.buffer = CausalBuffer::new();
                            for r in pending {
                                kl.buffer.deliver(&mut kl.log, r);
                            }
                        }
                    }
                }
                self.drain_gaps()?;
            }
            Payload::Delta { groups, stats, .. } => {
                self.stats = self.stats.join(stats);
                for g in groups {
                    if g.first == 0 || g.first > g.last {
                        return Err(ReplicationError::Malformed(format!("empty group from {}", g.origin)));
                    }
                    if g.last > self.vv.get(g.origin) {
                        self.gaps.push(g.clone());
                    }
                }
                self.drain_gaps()?;
            }
        }
        Ok(self.vv.diff(&before))
    }

    fn drain_gaps(&mut self) -> Result<(), ReplicationError> {
        loop {
            let vv = &self.vv;
            let next = self
                .gaps
                .iter()
                .position(|g| g.first <= vv.get(g.origin) + 1 && g.last > vv.get(g.origin));
            let Some(i) = next else { break };
            let g = self.gaps.swap_remove(i);
            for (k, d) in &g.deltas {
                self.store.apply(k, d)?;
            }
            self.vv.set(g.origin, g.last);
            if let Some(logs) = &mut self.logs {
                for (id, e) in &g.log {
                    let kl = logs
                        .get_mut(&e.key)
                        .ok_or_else(|| ReplicationError::UnknownKey(e.key.clone()))?;
                    kl.buffer.deliver(
                        &mut kl.log,
                        LogRecord {
                            node: LogNode { id: *id, op: e.op.clone() },
                            preds: e.preds.clone(),
                        },
                    );
                }
            }
            self.delta_buffer.push(g);
        }
        let vv = &self.vv;
        self.gaps.retain(|g| g.last > vv.get(g.origin));
        Ok(())
    }

    /// Drops groups every one of `peer_acks` already covers.
    pub fn prune_with(&mut self, peer_acks: &[VersionVector]) {
        let floor = VersionVector::meet_all(peer_acks);
        self.delta_buffer.retain(|g| g.last > floor.get(g.origin));
    }

    /// Prunes using the acks piggybacked on received gossip. A peer never
    /// heard from pins everything.
    pub fn prune_delta_buffer(&mut self) {
        let acks: Vec<VersionVector> = self.peers().map(|p| self.ack(p)).collect();
        if !acks.is_empty() {
            self.prune_with(&acks);
        }
    }

    /// Replays each mirrored key log; `None` when the mirror is off.
    pub fn replay_logs(&self) -> Option<Result<BTreeMap<String, LatticeValue>, PoLogError>> {
        let logs = self.logs.as_ref()?;
        Some(
            logs.iter()
                .map(|(k, kl)| {
                    let bottom = LatticeValue::bottom(&self.store.get(k).expect("schema key").lattice_type());
                    Ok((k.clone(), kl.log.replay(bottom, op_interpreter)?))
                })
                .collect(),
        )
    }

    pub fn pending_log_records(&self) -> usize {
        self.logs
            .as_ref()
            .map_or(0, |l| l.values().map(|kl| kl.buffer.len()).sum())
    }
}
