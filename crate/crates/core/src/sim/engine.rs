use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{GossipMode, SimConfig, SimError, SimOutcome, Workload, WorkloadItem};
use crate::coordination::{adaptive_read, adaptive_write, targets, Choice, ReadStrategy, WriteStrategy};
use crate::dsl::PlanMode;
use crate::polog::OpId;
use crate::query::{bind, BoundQuery, QueryValue};
use crate::replication::{Payload, Replica};
use crate::trace::{Answer, Channel, Trace, TraceRecord};
use crate::{ReplicaId, Store};

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "channel", rename_all = "snake_case")]
enum Message {
    Gossip { payload: Payload },
    WritePush { id: OpId, payload: Payload },
    WriteAck { id: OpId },
    ReadRequest { round: u64, keys: Vec<String> },
    ReadReply { round: u64, store: Store },
}

impl Message {
    fn channel(&self) -> Channel {
        match self {
            Message::Gossip {
                payload: Payload::Full { .. },
            } => Channel::GossipFull,
            Message::Gossip {
                payload: Payload::Delta { .. },
            } => Channel::GossipDelta,
            Message::WritePush { .. } => Channel::WritePush,
            Message::WriteAck { .. } => Channel::WriteAck,
            Message::ReadRequest { .. } => Channel::ReadRequest,
            Message::ReadReply { .. } => Channel::ReadReply,
        }
    }

    fn bytes(&self) -> usize {
        serde_json::to_string(self).expect("messages always serialize").len()
    }
}

#[derive(Clone, Debug)]
enum Event {
    Item(usize),
    Tick(ReplicaId),
    Deliver {
        msg: u64,
        from: ReplicaId,
        to: ReplicaId,
        body: Message,
    },
    ReadTimeout(u64),
    WriteTimeout(OpId),
}

struct ReadRound {
    reader: ReplicaId,
    query: BoundQuery,
    needed: usize,
    responders: BTreeSet<ReplicaId>,
    joined: Store,
}

struct WriteRound {
    needed: usize,
    acked: BTreeSet<ReplicaId>,
}

struct Engine<'w> {
    cfg: SimConfig,
    workload: &'w Workload,
    bound: Vec<Option<BoundQuery>>,
    replicas: Vec<Replica>,
    rng: ChaCha8Rng,
    queue: BTreeMap<(u64, u64), Event>,
    seq: u64,
    now: u64,
    next_msg: u64,
    next_round: u64,
    trace: Trace,
    truth: Store,
    faults: bool,
    tick_horizon: u64,
    reads: BTreeMap<u64, ReadRound>,
    writes: BTreeMap<OpId, WriteRound>,
    /// Items to run after quiescence.
    late: Vec<usize>,
}

/// Executes `workload` under `cfg`, then quiesces. Identical inputs give
/// identical traces.
pub fn run(cfg: &SimConfig, workload: &Workload) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    let bound = validate(cfg, workload)?;
    let n = cfg.replicas;
    let mut e = Engine {
        cfg: cfg.clone(),
        workload,
        bound,
        replicas: (0..n as u32)
            .map(|i| Replica::new(ReplicaId(i), n, &workload.keys, cfg.op_log))
            .collect(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        queue: BTreeMap::new(),
        seq: 0,
        now: 0,
        next_msg: 0,
        next_round: 0,
        trace: Trace::default(),
        truth: Store::new(workload.keys.iter().map(|(k, t)| (k.as_str(), t))),
        faults: true,
        tick_horizon: 0,
        reads: BTreeMap::new(),
        writes: BTreeMap::new(),
        late: Vec::new(),
    };
    e.trace.push(TraceRecord::Header {
        config: cfg.clone(),
        keys: workload.keys.clone(),
        policy: workload.policy,
    });
    let mut last = 0;
    for (i, item) in workload.items.iter().enumerate() {
        match item {
            WorkloadItem::Query(q) if q.after_quiesce => e.late.push(i),
            _ => {
                last = last.max(item.at());
                e.schedule(item.at(), Event::Item(i));
            }
        }
    }
    e.tick_horizon = last + 2 * cfg.gossip_interval;
    if n > 1 {
        for r in 0..n as u32 {
            if u64::from(r) <= e.tick_horizon {
                e.schedule(u64::from(r), Event::Tick(ReplicaId(r)));
            }
        }
    }
    e.drain()?;
    e.flush()?;
    e.trace.push(TraceRecord::Quiesced { time: e.now });
    if !e.late.is_empty() {
        e.tick_horizon = 0;
        for i in std::mem::take(&mut e.late) {
            e.now += 1;
            e.handle(Event::Item(i))?;
            e.drain()?;
        }
        e.flush()?;
    }
    e.trace.push(TraceRecord::FinalStates {
        time: e.now,
        stores: e.replicas.iter().map(|r| r.store().clone()).collect(),
        vvs: e.replicas.iter().map(|r| r.vv().clone()).collect(),
    });
    Ok(SimOutcome {
        trace: e.trace,
        replicas: e.replicas,
    })
}

fn validate(cfg: &SimConfig, w: &Workload) -> Result<Vec<Option<BoundQuery>>, SimError> {
    let n = cfg.replicas;
    let bottom = Store::new(w.keys.iter().map(|(k, t)| (k.as_str(), t)));
    let check_write = |c: Option<Choice<WriteStrategy>>| match c {
        Some(Choice::Fixed(s)) => s.validate(n).map_err(|e| e.to_string()),
        _ => Ok(()),
    };
    let check_read = |c: Option<Choice<ReadStrategy>>| match c {
        Some(Choice::Fixed(s)) => s.validate(n).map_err(|e| e.to_string()),
        _ => Ok(()),
    };
    let policy_err = |m: String| SimError::Config(format!("policy: {m}"));
    check_write(Some(w.policy.write)).map_err(policy_err)?;
    check_read(Some(w.policy.read)).map_err(policy_err)?;
    if !(w.policy.theta >= 0.0) {
        return Err(policy_err("theta must be non-negative".into()));
    }
    w.items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            let err = |message: String| SimError::Workload { index, message };
            let (at, replica) = match item {
                WorkloadItem::Op(o) => (o.at, o.replica),
                WorkloadItem::Query(q) => (q.at, q.replica),
            };
            if replica.index() >= n {
                return Err(err(format!("replica {replica} out of range ({n} replicas)")));
            }
            if at > cfg.max_ticks {
                return Err(err(format!("time {at} is past max_ticks {}", cfg.max_ticks)));
            }
            match item {
                WorkloadItem::Op(o) => {
                    bottom.delta_for(&o.key, &o.op).map_err(|e| err(e.to_string()))?;
                    check_write(o.write).map_err(err)?;
                    Ok(None)
                }
                WorkloadItem::Query(q) => {
                    let b = bind(&q.query, &w.keys).map_err(|e| err(e.to_string()))?;
                    let mode = q.plan.unwrap_or_else(|| b.default_mode(false));
                    if q.plan == Some(PlanMode::LocalThreshold) && !(b.monotone && b.threshold) {
                        return Err(err("local_threshold needs a monotone boolean query".into()));
                    }
                    if q.poll.is_some() && mode != PlanMode::LocalThreshold {
                        return Err(err("only local threshold queries can poll".into()));
                    }
                    if q.poll == Some(0) {
                        return Err(err("poll interval must be positive".into()));
                    }
                    check_read(q.read).map_err(err)?;
                    Ok(Some(b))
                }
            }
        })
        .collect()
}

impl Engine<'_> {
    fn n(&self) -> usize {
        self.replicas.len()
    }

    fn schedule(&mut self, time: u64, ev: Event) {
        self.queue.insert((time, self.seq), ev);
        self.seq += 1;
    }

    fn internal(&self, message: impl ToString) -> SimError {
        SimError::Internal {
            time: self.now,
            message: message.to_string(),
        }
    }

    fn drain(&mut self) -> Result<(), SimError> {
        while let Some(((t, _), ev)) = self.queue.pop_first() {
            if t > self.cfg.max_ticks {
                return Err(SimError::NonTermination {
                    time: t,
                    diagnostic: "event scheduled past max_ticks".into(),
                });
            }
            self.now = t;
            self.handle(ev)?;
            if self.cfg.check_invariants {
                self.check_under_approximation()?;
            }
        }
        Ok(())
    }

    fn check_under_approximation(&self) -> Result<(), SimError> {
        for r in &self.replicas {
            if !r.store().leq(&self.truth).map_err(|e| self.internal(e))? {
                return Err(SimError::Invariant {
                    time: self.now,
                    message: format!("{} holds state beyond the join of injected ops", r.id),
                });
            }
        }
        Ok(())
    }

    fn converged(&self) -> bool {
        let first = &self.replicas[0];
        self.replicas
            .iter()
            .all(|r| r.vv() == first.vv() && r.store() == first.store())
    }

    /// Turns faults off and runs all-to-all anti-entropy rounds until every
    /// replica holds the same state and nothing is in flight.
    fn flush(&mut self) -> Result<(), SimError> {
        self.faults = false;
        while !(self.converged() && self.queue.is_empty()) {
            if self.now > self.cfg.max_ticks {
                let vvs: Vec<String> = self
                    .replicas
                    .iter()
                    .map(|r| format!("{}={}", r.id, serde_json::to_string(r.vv()).unwrap_or_default()))
                    .collect();
                return Err(SimError::NonTermination {
                    time: self.now,
                    diagnostic: format!("version vectors {}", vvs.join(" ")),
                });
            }
            let n = self.n() as u32;
            for r in 0..n {
                for p in (0..n).filter(|p| *p != r) {
                    let payload = self.gossip_payload(ReplicaId(r), ReplicaId(p));
                    self.send(ReplicaId(r), ReplicaId(p), Message::Gossip { payload });
                }
            }
            self.drain()?;
            self.now += 1;
        }
        Ok(())
    }

    fn gossip_payload(&self, from: ReplicaId, to: ReplicaId) -> Payload {
        let r = &self.replicas[from.index()];
        match self.cfg.gossip {
            GossipMode::Full => r.full_gossip_payload(),
            GossipMode::Delta => r.delta_payload_for(to),
        }
    }

    fn send(&mut self, from: ReplicaId, to: ReplicaId, body: Message) {
        let msg = self.next_msg;
        self.next_msg += 1;
        self.trace.push(TraceRecord::MessageSent {
            time: self.now,
            msg,
            from,
            to,
            channel: body.channel(),
            bytes: body.bytes(),
        });
        if self.faults && self.rng.gen_bool(self.cfg.p_drop) {
            self.trace.push(TraceRecord::MessageDropped { time: self.now, msg });
            return;
        }
        let lat = self.rng.gen_range(self.cfg.latency.min..=self.cfg.latency.max);
        let dup = self.faults && self.rng.gen_bool(self.cfg.p_dup);
        if dup {
            let lat2 = self.rng.gen_range(self.cfg.latency.min..=self.cfg.latency.max);
            let copy = body.clone();
            self.schedule(self.now + lat2, Event::Deliver { msg, from, to, body: copy });
        }
        self.schedule(self.now + lat, Event::Deliver { msg, from, to, body });
    }

    fn answer(&mut self, round: u64, answer: Answer) {
        self.trace.push(TraceRecord::QueryAnswered {
            time: self.now,
            round,
            answer,
        });
    }

    fn receive(&mut self, at: ReplicaId, payload: &Payload) -> Result<(), SimError> {
        let ids = self.replicas[at.index()]
            .receive_gossip(payload)
            .map_err(|e| self.internal(e))?;
        if !ids.is_empty() {
            self.trace.push(TraceRecord::OpVisible {
                time: self.now,
                replica: at,
                ids,
            });
        }
        Ok(())
    }

    fn handle(&mut self, ev: Event) -> Result<(), SimError> {
        match ev {
            Event::Item(i) => match &self.workload.items[i] {
                WorkloadItem::Op(_) => self.inject_op(i),
                WorkloadItem::Query(_) => self.inject_query(i),
            },
            Event::Tick(r) => {
                let n = self.n() as u32;
                let pick = self.rng.gen_range(0..n - 1);
                let to = ReplicaId(if pick >= r.0 { pick + 1 } else { pick });
                self.trace.push(TraceRecord::GossipTick {
                    time: self.now,
                    replica: r,
                    to,
                });
                let payload = self.gossip_payload(r, to);
                self.send(r, to, Message::Gossip { payload });
                if self.cfg.prune {
                    self.replicas[r.index()].prune_delta_buffer();
                }
                let next = self.now + self.cfg.gossip_interval;
                if next <= self.tick_horizon {
                    self.schedule(next, Event::Tick(r));
                }
                Ok(())
            }
            Event::Deliver { msg, from, to, body } => {
                self.trace.push(TraceRecord::MessageDelivered {
                    time: self.now,
                    msg,
                    to,
                });
                self.deliver(from, to, body)
            }
            Event::ReadTimeout(round) => {
                if self.reads.remove(&round).is_some() {
                    self.answer(round, Answer::Unavailable);
                }
                Ok(())
            }
            Event::WriteTimeout(id) => {
                if let Some(w) = self.writes.remove(&id) {
                    self.trace.push(TraceRecord::WriteAcked {
                        time: self.now,
                        id,
                        ok: false,
                        replicas: w.acked.len() + 1,
                    });
                }
                Ok(())
            }
        }
    }

    fn deliver(&mut self, from: ReplicaId, to: ReplicaId, body: Message) -> Result<(), SimError> {
        match body {
            Message::Gossip { payload } => self.receive(to, &payload),
            Message::WritePush { id, payload } => {
                self.receive(to, &payload)?;
                if self.replicas[to.index()].vv().includes(id) {
                    self.send(to, from, Message::WriteAck { id });
                }
                Ok(())
            }
            Message::WriteAck { id } => {
                if let Some(w) = self.writes.get_mut(&id) {
                    w.acked.insert(from);
                    if w.acked.len() >= w.needed {
                        let replicas = w.acked.len() + 1;
                        self.writes.remove(&id);
                        self.trace.push(TraceRecord::WriteAcked {
                            time: self.now,
                            id,
                            ok: true,
                            replicas,
                        });
                    }
                }
                Ok(())
            }
            Message::ReadRequest { round, keys } => {
                let store = self.replicas[to.index()].store().project(keys.iter().map(String::as_str));
                self.send(to, from, Message::ReadReply { round, store });
                Ok(())
            }
            Message::ReadReply { round, store } => {
                let Some(rd) = self.reads.get_mut(&round) else {
                    return Ok(());
                };
                if rd.reader != to || !rd.responders.insert(from) {
                    return Ok(());
                }
                rd.joined.merge_in(&store).map_err(|e| SimError::Internal {
                    time: self.now,
                    message: e.to_string(),
                })?;
                if rd.responders.len() >= rd.needed {
                    let rd = self.reads.remove(&round).expect("present above");
                    let value = rd.query.eval(&rd.joined).map_err(|e| self.internal(e))?;
                    self.answer(round, Answer::Value { value, stale: false });
                }
                Ok(())
            }
        }
    }

    fn inject_op(&mut self, i: usize) -> Result<(), SimError> {
        let WorkloadItem::Op(o) = &self.workload.items[i] else {
            unreachable!("called for op items")
        };
        let r = o.replica;
        let ws = match o.write.unwrap_or(self.workload.policy.write) {
            Choice::Fixed(s) => s,
            Choice::Adaptive => adaptive_write(&mut self.replicas[r.index()].stats, &o.key, r, self.workload.policy.theta),
        };
        let deps = self.replicas[r.index()].vv().clone();
        let rec = self.replicas[r.index()]
            .apply_local_op(&o.key, &o.op)
            .map_err(|e| self.internal(e))?;
        self.truth.apply(&o.key, &rec.delta).map_err(|e| self.internal(e))?;
        self.trace.push(TraceRecord::OpInjected {
            time: self.now,
            replica: r,
            session: o.session.clone(),
            id: rec.id,
            key: o.key.clone(),
            op: o.op.clone(),
            delta: rec.delta.clone(),
            deps,
            write: ws,
        });
        let n = self.n();
        let others: Vec<ReplicaId> = targets(r, ws.size(n), n).into_iter().filter(|t| *t != r).collect();
        if others.is_empty() {
            self.trace.push(TraceRecord::WriteAcked {
                time: self.now,
                id: rec.id,
                ok: true,
                replicas: 1,
            });
            return Ok(());
        }
        self.writes.insert(
            rec.id,
            WriteRound {
                needed: others.len(),
                acked: BTreeSet::new(),
            },
        );
        for t in others {
            let payload = self.gossip_payload(r, t);
            self.send(r, t, Message::WritePush { id: rec.id, payload });
        }
        self.schedule(self.now + self.cfg.coord_timeout, Event::WriteTimeout(rec.id));
        Ok(())
    }

    fn inject_query(&mut self, i: usize) -> Result<(), SimError> {
        let WorkloadItem::Query(q) = &self.workload.items[i] else {
            unreachable!("called for query items")
        };
        let bound = self.bound[i].clone().expect("bound during validation");
        let r = q.replica;
        let mode = q.plan.unwrap_or_else(|| bound.default_mode(false));
        let round = self.next_round;
        self.next_round += 1;
        if !bound.monotone {
            for k in &bound.keys {
                self.replicas[r.index()].stats.record_nonmonotone_read(k, r);
            }
        }
        let n = self.n();
        let theta = self.workload.policy.theta;
        let strategy = (mode == PlanMode::Coordinated).then(|| match q.read.unwrap_or(self.workload.policy.read) {
            Choice::Fixed(s) => s,
            Choice::Adaptive => {
                let stats = &mut self.replicas[r.index()].stats;
                // a multi-key read is only as cheap as its most exposed key
                bound
                    .keys
                    .iter()
                    .map(|k| adaptive_read(stats, k, r, n, theta))
                    .max_by_key(|s| s.size(n))
                    .unwrap_or(ReadStrategy::ReadAll)
            }
        });
        self.trace.push(TraceRecord::QueryIssued {
            time: self.now,
            round,
            replica: r,
            session: q.session.clone(),
            query: q.query.clone(),
            monotone: bound.monotone,
            mode,
            strategy,
        });
        let local = self.replicas[r.index()].store().clone();
        for k in &bound.keys {
            self.trace.push(TraceRecord::StateSnapshot {
                time: self.now,
                replica: r,
                key: k.clone(),
                value: local.get(k).expect("bound keys exist").clone(),
            });
        }
        match (mode, strategy) {
            (PlanMode::LocalThreshold, _) => {
                let v = bound.eval(&local).map_err(|e| self.internal(e))?;
                if v == QueryValue::Bool(true) {
                    self.answer(round, Answer::Ready { value: v });
                } else {
                    self.answer(round, Answer::Unknown);
                    if let Some(every) = q.poll {
                        if self.now + every <= self.tick_horizon {
                            self.schedule(self.now + every, Event::Item(i));
                        } else {
                            self.late.push(i);
                        }
                    }
                }
            }
            (PlanMode::LocalLowerBound, _) => {
                let value = bound.eval(&local).map_err(|e| self.internal(e))?;
                self.answer(round, Answer::Value { value, stale: true });
            }
            (PlanMode::Coordinated, rs) => {
                let rs = rs.expect("resolved for coordinated plans");
                let chosen: Vec<ReplicaId> = targets(r, rs.size(n), n).into_iter().filter(|t| *t != r).collect();
                let joined = local.project(bound.keys.iter().map(String::as_str));
                if chosen.is_empty() {
                    let value = bound.eval(&joined).map_err(|e| self.internal(e))?;
                    self.answer(round, Answer::Value { value, stale: false });
                    return Ok(());
                }
                let keys = bound.keys.clone();
                self.reads.insert(
                    round,
                    ReadRound {
                        reader: r,
                        query: bound,
                        needed: chosen.len() + 1,
                        responders: BTreeSet::from([r]),
                        joined,
                    },
                );
                for t in chosen {
                    self.send(r, t, Message::ReadRequest { round, keys: keys.clone() });
                }
                self.schedule(self.now + self.cfg.coord_timeout, Event::ReadTimeout(round));
            }
        }
        Ok(())
    }
}
