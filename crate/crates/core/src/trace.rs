//! Run traces: one JSON object per line, tagged by `kind`.
//!
//! A trace records everything the checker needs to audit a run offline:
//! the configuration and key schema, every injected op with its delta and
//! causal dependencies, every message, every query and its answer, and the
//! final replica states after quiescence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordination::{Policy, ReadStrategy, WriteStrategy};
use crate::dsl::PlanMode;
use crate::lattice::{LatticeType, LatticeValue, Op};
use crate::polog::OpId;
use crate::query::{QuerySpec, QueryValue};
use crate::replication::VersionVector;
use crate::sim::SimConfig;
use crate::{ReplicaId, Store};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace is missing its header")]
    NoHeader,
    #[error("trace is not quiesced (no final states)")]
    NotQuiesced,
    #[error("malformed trace: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    GossipFull,
    GossipDelta,
    WritePush,
    WriteAck,
    ReadRequest,
    ReadReply,
}

impl Channel {
    pub fn is_gossip(self) -> bool {
        matches!(self, Channel::GossipFull | Channel::GossipDelta)
    }
}

/// What a query returned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Answer {
    /// Definitive threshold result.
    Ready { value: QueryValue },
    /// Threshold not (yet) met locally.
    Unknown,
    /// A plain value; `stale` marks local lower-bound reads.
    Value { value: QueryValue, stale: bool },
    Unavailable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Header {
        config: SimConfig,
        keys: BTreeMap<String, LatticeType>,
        policy: Policy,
    },
    OpInjected {
        time: u64,
        replica: ReplicaId,
        session: String,
        id: OpId,
        key: String,
        op: Op,
        delta: LatticeValue,
        /// Version vector of the origin just before the op.
        deps: VersionVector,
        write: WriteStrategy,
    },
    GossipTick {
        time: u64,
        replica: ReplicaId,
        to: ReplicaId,
    },
    MessageSent {
        time: u64,
        msg: u64,
        from: ReplicaId,
        to: ReplicaId,
        channel: Channel,
        bytes: usize,
    },
    MessageDelivered {
        time: u64,
        msg: u64,
        to: ReplicaId,
    },
    MessageDropped {
        time: u64,
        msg: u64,
    },
    OpVisible {
        time: u64,
        replica: ReplicaId,
        ids: Vec<OpId>,
    },
    WriteAcked {
        time: u64,
        id: OpId,
        ok: bool,
        replicas: usize,
    },
    QueryIssued {
        time: u64,
        round: u64,
        replica: ReplicaId,
        session: String,
        query: QuerySpec,
        monotone: bool,
        mode: PlanMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strategy: Option<ReadStrategy>,
    },
    StateSnapshot {
        time: u64,
        replica: ReplicaId,
        key: String,
        value: LatticeValue,
    },
    QueryAnswered {
        time: u64,
        round: u64,
        answer: Answer,
    },
    Quiesced {
        time: u64,
    },
    FinalStates {
        time: u64,
        stores: Vec<Store>,
        vvs: Vec<VersionVector>,
    },
}

impl TraceRecord {
    pub fn time(&self) -> Option<u64> {
        use TraceRecord::*;
        match self {
            Header { .. } => None,
            OpInjected { time, .. }
            | GossipTick { time, .. }
            | MessageSent { time, .. }
            | MessageDelivered { time, .. }
            | MessageDropped { time, .. }
            | OpVisible { time, .. }
            | WriteAcked { time, .. }
            | QueryIssued { time, .. }
            | StateSnapshot { time, .. }
            | QueryAnswered { time, .. }
            | Quiesced { time }
            | FinalStates { time, .. } => Some(*time),
        }
    }
}

/// An injected op, as the checker sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectedOp {
    /// Position in the trace.
    pub index: usize,
    pub time: u64,
    pub replica: ReplicaId,
    pub session: String,
    pub id: OpId,
    pub key: String,
    pub delta: LatticeValue,
    pub deps: VersionVector,
}

/// A query with its answer, if it got one.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub issued_index: usize,
    pub answered_index: Option<usize>,
    pub time: u64,
    pub round: u64,
    pub replica: ReplicaId,
    pub session: String,
    pub query: QuerySpec,
    pub monotone: bool,
    pub mode: PlanMode,
    pub strategy: Option<ReadStrategy>,
    pub answer: Option<Answer>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records always serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses line-delimited records; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(line).map_err(|e| TraceError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Trace { records })
    }

    /// Checks structural invariants: a leading header, non-decreasing times,
    /// one answer per issued query.
    pub fn validate(&self) -> Result<(), TraceError> {
        if !matches!(self.records.first(), Some(TraceRecord::Header { .. })) {
            return Err(TraceError::NoHeader);
        }
        let mut last = 0;
        let mut issued = BTreeMap::new();
        for r in &self.records[1..] {
            match r.time() {
                Some(t) if t < last => {
                    return Err(TraceError::Malformed(format!("time goes backwards at {t}")));
                }
                Some(t) => last = t,
                None => return Err(TraceError::Malformed("second header".into())),
            }
            match r {
                TraceRecord::QueryIssued { round, .. } => {
                    if issued.insert(*round, false).is_some() {
                        return Err(TraceError::Malformed(format!("round {round} issued twice")));
                    }
                }
                TraceRecord::QueryAnswered { round, .. } => match issued.get_mut(round) {
                    Some(done @ false) => *done = true,
                    Some(true) => return Err(TraceError::Malformed(format!("round {round} answered twice"))),
                    None => return Err(TraceError::Malformed(format!("round {round} answered before issue"))),
                },
                _ => {}
            }
        }
        if let Some((round, _)) = issued.iter().find(|(_, done)| !**done) {
            return Err(TraceError::Malformed(format!("round {round} never answered")));
        }
        Ok(())
    }

    pub fn header(&self) -> Result<(&SimConfig, &BTreeMap<String, LatticeType>, &Policy), TraceError> {
        match self.records.first() {
            Some(TraceRecord::Header { config, keys, policy }) => Ok((config, keys, policy)),
            _ => Err(TraceError::NoHeader),
        }
    }

    pub fn final_states(&self) -> Option<&[Store]> {
        self.records.iter().rev().find_map(|r| match r {
            TraceRecord::FinalStates { stores, .. } => Some(stores.as_slice()),
            _ => None,
        })
    }

    pub fn ops(&self) -> Vec<InjectedOp> {
        self.records
            .iter()
            .enumerate()
            .filter_map(|(index, r)| match r {
                TraceRecord::OpInjected {
                    time,
                    replica,
                    session,
                    id,
                    key,
                    delta,
                    deps,
                    ..
                } => Some(InjectedOp {
                    index,
                    time: *time,
                    replica: *replica,
                    session: session.clone(),
                    id: *id,
                    key: key.clone(),
                    delta: delta.clone(),
                    deps: deps.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn queries(&self) -> Vec<QueryRecord> {
        let mut out: Vec<QueryRecord> = Vec::new();
        let mut by_round = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            match r {
                TraceRecord::QueryIssued {
                    time,
                    round,
                    replica,
                    session,
                    query,
                    monotone,
                    mode,
                    strategy,
                } => {
                    by_round.insert(*round, out.len());
                    out.push(QueryRecord {
                        issued_index: i,
                        answered_index: None,
                        time: *time,
                        round: *round,
                        replica: *replica,
                        session: session.clone(),
                        query: query.clone(),
                        monotone: *monotone,
                        mode: *mode,
                        strategy: *strategy,
                        answer: None,
                    });
                }
                TraceRecord::QueryAnswered { round, answer, .. } => {
                    if let Some(q) = by_round.get(round).map(|j| &mut out[*j]) {
                        q.answered_index = Some(i);
                        q.answer = Some(answer.clone());
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Store holding the join of every injected delta.
    pub fn join_of_ops(&self) -> Result<Store, TraceError> {
        let (_, keys, _) = self.header()?;
        let mut s = Store::new(keys.iter().map(|(k, t)| (k.as_str(), t)));
        for op in self.ops() {
            s.apply(&op.key, &op.delta)
                .map_err(|e| TraceError::Malformed(format!("op {}: {e}", op.id)))?;
        }
        Ok(s)
    }
}
