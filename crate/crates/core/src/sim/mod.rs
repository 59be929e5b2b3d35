//! Deterministic discrete-event simulation of a replicated store.
//!
//! Time is measured in logical ticks. Events run in `(time, insertion)`
//! order and every random choice (gossip peer, latency, drop, duplicate)
//! comes from one seeded generator consumed in event order, so a seed fixes
//! the trace byte for byte.

mod engine;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordination::{Choice, Policy, ReadStrategy, WriteStrategy};
use crate::dsl::PlanMode;
use crate::lattice::{LatticeType, Op};
use crate::query::QuerySpec;
use crate::replication::Replica;
use crate::trace::Trace;
use crate::ReplicaId;

pub use engine::run;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GossipMode {
    Full,
    #[default]
    Delta,
}

impl fmt::Display for GossipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GossipMode::Full => "full",
            GossipMode::Delta => "delta",
        })
    }
}

impl std::str::FromStr for GossipMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(GossipMode::Full),
            "delta" => Ok(GossipMode::Delta),
            _ => Err(format!("unknown gossip mode '{s}' (expected full or delta)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Latency {
    pub min: u64,
    pub max: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub replicas: usize,
    pub latency: Latency,
    pub p_drop: f64,
    pub p_dup: f64,
    pub gossip_interval: u64,
    pub gossip: GossipMode,
    pub max_ticks: u64,
    /// Prune delta buffers on every gossip tick.
    pub prune: bool,
    /// Mirror every key as an op log alongside the state.
    pub op_log: bool,
    /// Assert after every event that no replica is ahead of the global join.
    pub check_invariants: bool,
    /// Ticks a coordinated read or write waits for responses.
    pub coord_timeout: u64,
    /// The checker's freshness bound: reads must reflect every op injected
    /// more than this many ticks earlier. `None` admits any stale cut.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub staleness_horizon: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            replicas: 3,
            latency: Latency { min: 1, max: 5 },
            p_drop: 0.0,
            p_dup: 0.0,
            gossip_interval: 10,
            gossip: GossipMode::Delta,
            max_ticks: 100_000,
            prune: true,
            op_log: false,
            check_invariants: true,
            coord_timeout: 50,
            staleness_horizon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpInject {
    pub at: u64,
    pub replica: ReplicaId,
    pub session: String,
    pub key: String,
    pub op: Op,
    pub write: Option<Choice<WriteStrategy>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryInject {
    pub at: u64,
    pub replica: ReplicaId,
    pub session: String,
    pub query: QuerySpec,
    /// `None` picks the safe default for the query's class.
    pub plan: Option<PlanMode>,
    pub read: Option<Choice<ReadStrategy>>,
    /// Run after the system has quiesced instead of at `at`.
    pub after_quiesce: bool,
    /// Re-issue a local threshold query every `poll` ticks until it answers
    /// `true`. A poll still open when gossip stops runs once more after
    /// quiescence.
    pub poll: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WorkloadItem {
    Op(OpInject),
    Query(QueryInject),
}

impl WorkloadItem {
    pub fn at(&self) -> u64 {
        match self {
            WorkloadItem::Op(o) => o.at,
            WorkloadItem::Query(q) => q.at,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Workload {
    pub keys: BTreeMap<String, LatticeType>,
    pub policy: Policy,
    pub items: Vec<WorkloadItem>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("workload item {index}: {message}")]
    Workload { index: usize, message: String },
    #[error("no convergence by tick {time}: {diagnostic}")]
    NonTermination { time: u64, diagnostic: String },
    #[error("invariant violated at tick {time}: {message}")]
    Invariant { time: u64, message: String },
    #[error("internal error at tick {time}: {message}")]
    Internal { time: u64, message: String },
}

/// A finished run: the trace and the replicas in their final state.
#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub trace: Trace,
    pub replicas: Vec<Replica>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_owned()));
        if self.replicas == 0 {
            return bad("replicas must be at least 1");
        }
        if self.latency.min > self.latency.max {
            return bad("latency.min exceeds latency.max");
        }
        if self.latency.min == 0 {
            return bad("latency.min must be at least 1");
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return bad("p_drop must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.p_dup) {
            return bad("p_dup must be in [0, 1]");
        }
        if self.gossip_interval == 0 {
            return bad("gossip_interval must be positive");
        }
        if self.coord_timeout == 0 {
            return bad("coord_timeout must be positive");
        }
        Ok(())
    }
}
