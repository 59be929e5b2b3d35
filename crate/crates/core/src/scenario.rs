//! Scenario files: one JSON object per line, `#` starts a comment line.
//!
//! ```text
//! {"kind":"config","replicas":3,"seed":7,"gossip":"delta"}
//! {"kind":"key","name":"cart","type":"twopset"}
//! {"kind":"policy","write":"write_one","read":"read_all"}
//! {"kind":"op","at":1,"replica":0,"session":"alice","key":"cart","op":"twopset_add","args":["potato"]}
//! {"kind":"query","at":35,"replica":1,"session":"alice","query":"contents","key":"cart"}
//! {"kind":"query","at":40,"replica":2,"dsl":"COUNT(cart.adds) > 1","plan":"local_threshold"}
//! {"kind":"generate","count":200,"key":"cart","op":"twopset_add","start":1,"every":1}
//! ```
//!
//! A query with `"poll": k` re-runs every `k` ticks until it answers
//! `true`.
//!
//! `generate` expands to `count` ops spread round-robin over `replicas`
//! (default: all), one every `every` ticks from `start`. Element ops get the
//! argument `"<prefix><i>"`, counters an increment of 1.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::coordination::{Choice, Policy, ReadStrategy, WriteStrategy};
use crate::dsl::PlanMode;
use crate::lattice::{LatticeType, Op};
use crate::query::{bind, QuerySpec};
use crate::sim::{self, GossipMode, OpInject, QueryInject, SimConfig, SimError, SimOutcome, Workload, WorkloadItem};
use crate::{ReplicaId, Store};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {path}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub path: String,
    pub message: String,
}

fn err(line: usize, path: &str, message: impl ToString) -> ScenarioError {
    ScenarioError {
        line,
        path: path.to_owned(),
        message: message.to_string(),
    }
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Config(SimConfig),
    Key(KeyLine),
    Policy(Policy),
    Op(OpLine),
    Query(QueryLine),
    Generate(GenerateLine),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyLine {
    name: String,
    #[serde(rename = "type")]
    ty: LatticeType,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OpLine {
    at: u64,
    replica: u32,
    session: Option<String>,
    key: String,
    op: String,
    #[serde(default)]
    args: Vec<Value>,
    write: Option<Choice<WriteStrategy>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryLine {
    #[serde(default)]
    at: u64,
    replica: u32,
    session: Option<String>,
    query: Option<String>,
    key: Option<String>,
    dsl: Option<String>,
    plan: Option<String>,
    read: Option<Choice<ReadStrategy>>,
    #[serde(default)]
    after_quiesce: bool,
    poll: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateLine {
    count: usize,
    key: String,
    op: String,
    replicas: Option<Vec<u32>>,
    #[serde(default = "one")]
    start: u64,
    #[serde(default = "one")]
    every: u64,
    prefix: Option<String>,
    session: Option<String>,
    write: Option<Choice<WriteStrategy>>,
}

fn one() -> u64 {
    1
}

enum Pending {
    Op(OpLine),
    Query(QueryLine),
    Generate(GenerateLine),
}

/// Per-run changes applied on top of a scenario file. Strategy overrides
/// replace both the policy and any per-item strategy.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub gossip: Option<GossipMode>,
    pub write: Option<Choice<WriteStrategy>>,
    pub read: Option<Choice<ReadStrategy>>,
    pub prune: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: SimConfig,
    pub workload: Workload,
}

fn counts_foreign_slot(op: &Op, origin: ReplicaId) -> bool {
    match op {
        Op::CounterInc { replica, .. } | Op::PnInc { replica, .. } | Op::PnDec { replica, .. } => *replica != origin,
        Op::MapPut { inner, .. } => counts_foreign_slot(inner, origin),
        _ => false,
    }
}

fn parse_plan(text: &str) -> Result<Option<PlanMode>, String> {
    match text {
        "auto" => Ok(None),
        "local_threshold" => Ok(Some(PlanMode::LocalThreshold)),
        "local_lower_bound" => Ok(Some(PlanMode::LocalLowerBound)),
        "coordinated" => Ok(Some(PlanMode::Coordinated)),
        _ => Err(format!(
            "unknown plan '{text}' (expected auto, local_threshold, local_lower_bound or coordinated)"
        )),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut config = None;
        let mut policy = None;
        let mut keys = BTreeMap::new();
        let mut pending = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parsed: Line = serde_json::from_str(trimmed).map_err(|e| err(line, "kind", e))?;
            match parsed {
                Line::Config(c) => {
                    if config.replace(c).is_some() {
                        return Err(err(line, "config", "config given twice"));
                    }
                }
                Line::Policy(p) => {
                    if policy.replace(p).is_some() {
                        return Err(err(line, "policy", "policy given twice"));
                    }
                }
                Line::Key(k) => {
                    if keys.insert(k.name.clone(), k.ty).is_some() {
                        return Err(err(line, "key.name", format!("key '{}' declared twice", k.name)));
                    }
                }
                Line::Op(o) => pending.push((line, Pending::Op(o))),
                Line::Query(q) => pending.push((line, Pending::Query(q))),
                Line::Generate(g) => pending.push((line, Pending::Generate(g))),
            }
        }
        let config = config.unwrap_or_default();
        config.validate().map_err(|e| err(0, "config", e))?;
        let policy = policy.unwrap_or_default();
        let n = config.replicas;
        let bottom = Store::new(keys.iter().map(|(k, t)| (k.as_str(), t)));
        let pending: Vec<(usize, Pending)> = pending
            .into_iter()
            .flat_map(|(line, p)| match p {
                Pending::Generate(g) => expand(g, n).into_iter().map(|o| (line, Pending::Op(o))).collect(),
                other => vec![(line, other)],
            })
            .collect();
        let mut items = Vec::new();
        for (line, p) in pending {
            items.push(match p {
                Pending::Op(o) => {
                    if o.replica as usize >= n {
                        return Err(err(line, "op.replica", format!("replica {} out of range ({n} replicas)", o.replica)));
                    }
                    if !keys.contains_key(&o.key) {
                        return Err(err(line, "op.key", format!("undeclared key '{}'", o.key)));
                    }
                    let origin = ReplicaId(o.replica);
                    let op = Op::parse(&o.op, &o.args, origin).map_err(|e| err(line, "op.op", e))?;
                    if counts_foreign_slot(&op, origin) {
                        return Err(err(line, "op.args", "counter ops increment the issuing replica's own slot"));
                    }
                    bottom.delta_for(&o.key, &op).map_err(|e| err(line, "op.op", e))?;
                    if let Some(Choice::Fixed(w)) = o.write {
                        w.validate(n).map_err(|e| err(line, "op.write", e))?;
                    }
                    WorkloadItem::Op(OpInject {
                        at: o.at,
                        replica: origin,
                        session: o.session.unwrap_or_else(|| origin.to_string()),
                        key: o.key,
                        op,
                        write: o.write,
                    })
                }
                Pending::Query(q) => {
                    if q.replica as usize >= n {
                        return Err(err(line, "query.replica", format!("replica {} out of range ({n} replicas)", q.replica)));
                    }
                    let spec = match (q.query, q.key, q.dsl) {
                        (Some(query), Some(key), None) => QuerySpec::Named { query, key },
                        (None, None, Some(dsl)) => QuerySpec::Dsl { dsl },
                        _ => return Err(err(line, "query", "give either query and key, or dsl")),
                    };
                    let path = if matches!(spec, QuerySpec::Dsl { .. }) { "query.dsl" } else { "query.query" };
                    bind(&spec, &keys).map_err(|e| err(line, path, e))?;
                    let plan = q.plan.as_deref().map(parse_plan).transpose().map_err(|e| err(line, "query.plan", e))?;
                    if let Some(Choice::Fixed(r)) = q.read {
                        r.validate(n).map_err(|e| err(line, "query.read", e))?;
                    }
                    let origin = ReplicaId(q.replica);
                    WorkloadItem::Query(QueryInject {
                        at: q.at,
                        replica: origin,
                        session: q.session.unwrap_or_else(|| origin.to_string()),
                        query: spec,
                        plan: plan.flatten(),
                        read: q.read,
                        after_quiesce: q.after_quiesce,
                        poll: q.poll,
                    })
                }
                Pending::Generate(_) => unreachable!("expanded above"),
            });
        }
        Ok(Scenario {
            config,
            workload: Workload { keys, policy, items },
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.config.seed = s;
        }
        if let Some(g) = o.gossip {
            self.config.gossip = g;
        }
        if let Some(p) = o.prune {
            self.config.prune = p;
        }
        if let Some(w) = o.write {
            self.workload.policy.write = w;
        }
        if let Some(r) = o.read {
            self.workload.policy.read = r;
        }
        for item in &mut self.workload.items {
            match item {
                WorkloadItem::Op(op) if o.write.is_some() => op.write = None,
                WorkloadItem::Query(q) if o.read.is_some() => q.read = None,
                _ => {}
            }
        }
    }

    pub fn with(&self, o: &Overrides) -> Scenario {
        let mut s = self.clone();
        s.apply(o);
        s
    }

    pub fn run(&self) -> Result<SimOutcome, SimError> {
        sim::run(&self.config, &self.workload)
    }
}

fn expand(g: GenerateLine, n: usize) -> Vec<OpLine> {
    let replicas = g.replicas.unwrap_or_else(|| (0..n as u32).collect());
    let prefix = g.prefix.unwrap_or_else(|| format!("{}-", g.key));
    if replicas.is_empty() {
        return Vec::new();
    }
    (0..g.count)
        .map(|i| {
            let args = match g.op.as_str() {
                "counter_inc" | "pn_inc" | "pn_dec" => vec![Value::from(1)],
                "max_set" => vec![Value::from(i as u64 + 1)],
                "bool_set" => vec![],
                _ => vec![Value::from(format!("{prefix}{i}"))],
            };
            OpLine {
                at: g.start + i as u64 * g.every,
                replica: replicas[i % replicas.len()],
                session: g.session.clone(),
                key: g.key.clone(),
                op: g.op.clone(),
                args,
                write: g.write,
            }
        })
        .collect()
}
