//! Run metrics, derived from a trace alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checker::{check_trace, AnomalyOptions, CheckError};
use crate::polog::OpId;
use crate::sim::GossipMode;
use crate::trace::{Answer, Channel, Trace, TraceRecord};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCounts {
    pub ready: usize,
    pub unknown: usize,
    pub lower_bound: usize,
    pub coordinated: usize,
    pub unavailable: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounts {
    pub sent: usize,
    pub delivered: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub gossip_mode: GossipMode,
    /// Sum of `bytes` over every sent message.
    pub total_bytes: u64,
    /// Sum over gossip messages only.
    pub gossip_bytes: u64,
    pub bytes_by_channel: BTreeMap<Channel, u64>,
    /// Gossip bytes per gossip interval, indexed by `time / interval`.
    pub round_bytes: Vec<u64>,
    /// Ticks from injection to visibility at each other replica, as
    /// `ticks -> count`.
    pub staleness: BTreeMap<u64, u64>,
    pub queries: QueryCounts,
    pub messages: MessageCounts,
    pub ops: usize,
    pub convergence: bool,
    pub monotone_violations: usize,
    pub anomalies: Option<usize>,
}

/// Computes the report, running the checker for the verdict fields.
pub fn metrics(trace: &Trace, opts: AnomalyOptions) -> Result<MetricsReport, CheckError> {
    let (config, _, _) = trace.header()?;
    let verdict = check_trace(trace, opts)?;
    let mut total_bytes = 0;
    let mut gossip_bytes = 0;
    let mut bytes_by_channel = BTreeMap::new();
    let mut round_bytes: Vec<u64> = Vec::new();
    let mut staleness = BTreeMap::new();
    let mut queries = QueryCounts::default();
    let mut messages = MessageCounts::default();
    let mut injected: BTreeMap<OpId, u64> = BTreeMap::new();
    for r in &trace.records {
        match r {
            TraceRecord::OpInjected { time, id, .. } => {
                injected.insert(*id, *time);
            }
            TraceRecord::MessageSent {
                time, channel, bytes, ..
            } => {
                let b = *bytes as u64;
                messages.sent += 1;
                total_bytes += b;
                *bytes_by_channel.entry(*channel).or_default() += b;
                if channel.is_gossip() {
                    gossip_bytes += b;
                    let round = (*time / config.gossip_interval) as usize;
                    if round_bytes.len() <= round {
                        round_bytes.resize(round + 1, 0);
                    }
                    round_bytes[round] += b;
                }
            }
            TraceRecord::MessageDelivered { .. } => messages.delivered += 1,
            TraceRecord::MessageDropped { .. } => messages.dropped += 1,
            TraceRecord::OpVisible { time, ids, .. } => {
                for id in ids {
                    if let Some(t0) = injected.get(id) {
                        *staleness.entry(time - t0).or_default() += 1;
                    }
                }
            }
            TraceRecord::QueryAnswered { answer, .. } => match answer {
                Answer::Ready { .. } => queries.ready += 1,
                Answer::Unknown => queries.unknown += 1,
                Answer::Value { stale: true, .. } => queries.lower_bound += 1,
                Answer::Value { stale: false, .. } => queries.coordinated += 1,
                Answer::Unavailable => queries.unavailable += 1,
            },
            _ => {}
        }
    }
    Ok(MetricsReport {
        seed: config.seed,
        gossip_mode: config.gossip,
        total_bytes,
        gossip_bytes,
        bytes_by_channel,
        round_bytes,
        staleness,
        queries,
        messages,
        ops: injected.len(),
        convergence: verdict.convergence,
        monotone_violations: verdict.monotone_violations,
        anomalies: verdict.anomalies,
    })
}
