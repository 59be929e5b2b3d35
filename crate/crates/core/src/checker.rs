//! Offline audits of run traces.
//!
//! * [`check_convergence`]: after quiescence every replica holds exactly the
//!   join of all injected deltas.
//! * [`check_monotone_definitive`]: every definitive `true` from a monotone
//!   threshold query still holds on the final join.
//! * [`count_nonmonotone_anomalies`]: a non-monotone answer is an anomaly if
//!   no admissible consistent cut of the injected ops explains it.
//! * [`enumerate_delivery_orders`]: brute force over every causal delivery
//!   order of a handful of ops.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{LatticeError, LatticeType, Op};
use crate::query::{bind, BoundQuery, QueryError, QueryValue};
use crate::trace::{Answer, InjectedOp, Trace, TraceError};
use crate::{ReplicaId, Store};

pub const DEFAULT_CUT_BOUND: usize = 12;
pub const DEFAULT_ORDER_BOUND: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{ops} ops exceed the enumeration bound of {bound}; shrink the scenario")]
    BoundExceeded { ops: usize, bound: usize },
    #[error("op {index} depends on op {dep}, which does not precede it")]
    BadDependency { index: usize, dep: usize },
    #[error("op {index} names replica {replica}, but there are {n} replicas")]
    BadOrigin { index: usize, replica: ReplicaId, n: usize },
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceVerdict {
    pub pass: bool,
    pub details: Vec<String>,
}

/// Compares every final state with the join of all injected deltas.
pub fn check_convergence(trace: &Trace) -> Result<ConvergenceVerdict, CheckError> {
    let finals = trace.final_states().ok_or(TraceError::NotQuiesced)?;
    let join = trace.join_of_ops()?;
    let mut details = Vec::new();
    for (i, s) in finals.iter().enumerate() {
        if s.keys().ne(join.keys()) {
            details.push(format!("r{i}: key set differs from the schema"));
            continue;
        }
        for (k, v) in s.entries() {
            let want = join.get(k).expect("same key set");
            if v != want {
                details.push(format!(
                    "r{i}: key '{k}' is {} but the join of all ops is {}",
                    v.to_canonical(),
                    want.to_canonical()
                ));
            }
        }
    }
    Ok(ConvergenceVerdict {
        pass: details.is_empty(),
        details,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotoneViolation {
    pub round: u64,
    pub replica: ReplicaId,
    pub time: u64,
    pub query: String,
    pub final_value: QueryValue,
}

/// Re-evaluates every `Ready(true)` of a monotone query on the final join.
pub fn check_monotone_definitive(trace: &Trace) -> Result<Vec<MonotoneViolation>, CheckError> {
    let (_, keys, _) = trace.header()?;
    if trace.final_states().is_none() {
        return Err(TraceError::NotQuiesced.into());
    }
    let join = trace.join_of_ops()?;
    let mut out = Vec::new();
    for q in trace.queries() {
        let Some(Answer::Ready { value: QueryValue::Bool(true) }) = &q.answer else {
            continue;
        };
        let bound = bind(&q.query, keys)?;
        if !bound.monotone {
            continue;
        }
        let final_value = bound.eval(&join)?;
        if final_value != QueryValue::Bool(true) {
            out.push(MonotoneViolation {
                round: q.round,
                replica: q.replica,
                time: q.time,
                query: q.query.to_string(),
                final_value,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub round: u64,
    pub replica: ReplicaId,
    pub session: String,
    pub time: u64,
    pub query: String,
    pub observed: QueryValue,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyReport {
    /// Non-monotone answers examined.
    pub checked: usize,
    pub anomalies: Vec<Anomaly>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnomalyOptions {
    /// Most ops on a query's keys the cut search accepts.
    pub bound: usize,
    /// Overrides the trace's staleness horizon when set.
    pub horizon: Option<u64>,
}

impl Default for AnomalyOptions {
    fn default() -> Self {
        AnomalyOptions {
            bound: DEFAULT_CUT_BOUND,
            horizon: None,
        }
    }
}

fn empty_store(keys: &BTreeMap<String, LatticeType>) -> Store {
    Store::new(keys.iter().map(|(k, t)| (k.as_str(), t)))
}

/// Checks every non-monotone answer that carries a value, local or
/// coordinated, against the consistent cuts the querying session admits.
///
/// A cut takes a prefix of each origin's ops on the query's keys, closed
/// under the ops' recorded dependencies. It is admissible when it contains
/// every op the session (or the querying replica) issued before the query,
/// and every op injected more than the staleness horizon before it.
pub fn count_nonmonotone_anomalies(trace: &Trace, opts: AnomalyOptions) -> Result<AnomalyReport, CheckError> {
    let (config, keys, _) = trace.header()?;
    let horizon = opts.horizon.or(config.staleness_horizon);
    let all_ops = trace.ops();
    let mut report = AnomalyReport::default();
    for q in trace.queries() {
        let Some(Answer::Value { value: observed, .. }) = &q.answer else {
            continue;
        };
        let bound = bind(&q.query, keys)?;
        if bound.monotone {
            continue;
        }
        report.checked += 1;
        let answered = q.answered_index.expect("answer present");
        let relevant: Vec<&InjectedOp> = all_ops
            .iter()
            .filter(|o| o.index < answered && bound.keys.contains(&o.key))
            .collect();
        if relevant.len() > opts.bound {
            return Err(CheckError::BoundExceeded {
                ops: relevant.len(),
                bound: opts.bound,
            });
        }
        let required = |o: &InjectedOp| {
            let session = o.index < q.issued_index && (o.session == q.session || o.replica == q.replica);
            let old = horizon.is_some_and(|h| o.time + h < q.time);
            session || old
        };
        if !explained(&bound, keys, &relevant, &required, observed)? {
            report.anomalies.push(Anomaly {
                round: q.round,
                replica: q.replica,
                session: q.session.clone(),
                time: q.time,
                query: q.query.to_string(),
                observed: observed.clone(),
            });
        }
    }
    Ok(report)
}

fn explained(
    bound: &BoundQuery,
    keys: &BTreeMap<String, LatticeType>,
    ops: &[&InjectedOp],
    required: &dyn Fn(&InjectedOp) -> bool,
    observed: &QueryValue,
) -> Result<bool, CheckError> {
    let mut by_origin: BTreeMap<ReplicaId, Vec<&InjectedOp>> = BTreeMap::new();
    for o in ops {
        by_origin.entry(o.replica).or_default().push(o);
    }
    for list in by_origin.values_mut() {
        list.sort_by_key(|o| o.id.seq);
    }
    let origins: Vec<ReplicaId> = by_origin.keys().copied().collect();
    let lists: Vec<&Vec<&InjectedOp>> = by_origin.values().collect();
    let lower: Vec<usize> = lists
        .iter()
        .map(|l| l.iter().rposition(|o| required(o)).map_or(0, |p| p + 1))
        .collect();
    // how many of origin j's listed ops an op with dependency vector `deps` needs
    let needed = |deps: &crate::replication::VersionVector, j: usize| {
        lists[j].iter().filter(|o| o.id.seq <= deps.get(origins[j])).count()
    };
    let mut cut = lower.clone();
    loop {
        let closed = (0..lists.len()).all(|i| {
            cut[i] == 0 || {
                let last = lists[i][cut[i] - 1];
                (0..lists.len()).all(|j| j == i || cut[j] >= needed(&last.deps, j))
            }
        });
        if closed {
            let mut s = empty_store(keys);
            for (i, list) in lists.iter().enumerate() {
                for o in &list[..cut[i]] {
                    s.apply(&o.key, &o.delta)?;
                }
            }
            if &bound.eval(&s)? == observed {
                return Ok(true);
            }
        }
        // odometer over prefix lengths
        let mut i = 0;
        loop {
            if i == lists.len() {
                return Ok(false);
            }
            if cut[i] < lists[i].len() {
                cut[i] += 1;
                break;
            }
            cut[i] = lower[i];
            i += 1;
        }
    }
}

/// One op for [`enumerate_delivery_orders`]. It follows every earlier op of
/// the same origin and every op listed in `after`.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleOp {
    pub origin: ReplicaId,
    pub key: String,
    pub op: Op,
    pub after: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regression {
    pub order: Vec<usize>,
    /// Number of ops delivered when the earlier value was observed.
    pub step: usize,
    pub before: QueryValue,
    pub after: QueryValue,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Delivery orders explored (linear extensions of the causal order).
    pub orders: usize,
    /// Every value the query took at any prefix of any order.
    pub outcomes: BTreeSet<QueryValue>,
    /// First order in which the query's value went backwards.
    pub regression: Option<Regression>,
    /// Prefixes where a threshold query was `true` but the final join is not.
    pub definitive_violations: usize,
    pub final_value: QueryValue,
}

/// Explores every delivery order of `ops` consistent with causality and
/// evaluates `query` after each delivered op. The orders are the same at
/// every replica, so `n_replicas` only bounds the origins.
pub fn enumerate_delivery_orders(
    ops: &[OracleOp],
    n_replicas: usize,
    keys: &BTreeMap<String, LatticeType>,
    query: &BoundQuery,
    bound: usize,
) -> Result<OracleReport, CheckError> {
    if ops.len() > bound {
        return Err(CheckError::BoundExceeded { ops: ops.len(), bound });
    }
    let mut preds: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ops.len()];
    let mut origin_state: BTreeMap<ReplicaId, Store> = BTreeMap::new();
    let mut deltas = Vec::new();
    for (i, o) in ops.iter().enumerate() {
        if o.origin.index() >= n_replicas {
            return Err(CheckError::BadOrigin {
                index: i,
                replica: o.origin,
                n: n_replicas,
            });
        }
        for d in &o.after {
            if *d >= i {
                return Err(CheckError::BadDependency { index: i, dep: *d });
            }
            preds[i].insert(*d);
        }
        if let Some(prev) = (0..i).rev().find(|j| ops[*j].origin == o.origin) {
            preds[i].insert(prev);
        }
        let s = origin_state.entry(o.origin).or_insert_with(|| empty_store(keys));
        let d = s.delta_for(&o.key, &o.op)?;
        s.apply(&o.key, &d)?;
        deltas.push(d);
    }
    let mut final_store = empty_store(keys);
    for (o, d) in ops.iter().zip(&deltas) {
        final_store.apply(&o.key, d)?;
    }
    let final_value = query.eval(&final_store)?;
    let mut search = Search {
        ops,
        deltas: &deltas,
        preds: &preds,
        query,
        final_true: final_value == QueryValue::Bool(true),
        report: OracleReport {
            orders: 0,
            outcomes: BTreeSet::new(),
            regression: None,
            definitive_violations: 0,
            final_value,
        },
    };
    let start = empty_store(keys);
    let v0 = query.eval(&start)?;
    search.observe(&v0);
    let mut order = Vec::new();
    let mut values = vec![v0];
    search.dfs(&start, &mut order, &mut values)?;
    Ok(search.report)
}

struct Search<'a> {
    ops: &'a [OracleOp],
    deltas: &'a [crate::LatticeValue],
    preds: &'a [BTreeSet<usize>],
    query: &'a BoundQuery,
    final_true: bool,
    report: OracleReport,
}

impl Search<'_> {
    fn observe(&mut self, v: &QueryValue) {
        if *v == QueryValue::Bool(true) && self.query.monotone && self.query.threshold && !self.final_true {
            self.report.definitive_violations += 1;
        }
        self.report.outcomes.insert(v.clone());
    }

    fn dfs(&mut self, state: &Store, order: &mut Vec<usize>, values: &mut Vec<QueryValue>) -> Result<(), CheckError> {
        if order.len() == self.ops.len() {
            self.report.orders += 1;
            return Ok(());
        }
        for i in 0..self.ops.len() {
            if order.contains(&i) || !self.preds[i].iter().all(|p| order.contains(p)) {
                continue;
            }
            let mut next = state.clone();
            next.apply(&self.ops[i].key, &self.deltas[i])?;
            let v = self.query.eval(&next)?;
            self.observe(&v);
            let prev = values.last().expect("starts with the bottom value");
            if self.report.regression.is_none() && prev.leq(&v) != Some(true) {
                let mut o = order.clone();
                o.push(i);
                self.report.regression = Some(Regression {
                    order: o,
                    step: order.len(),
                    before: prev.clone(),
                    after: v.clone(),
                });
            }
            order.push(i);
            values.push(v);
            self.dfs(&next, order, values)?;
            order.pop();
            values.pop();
        }
        Ok(())
    }
}

/// Everything `check` reports about one trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub convergence: bool,
    pub monotone_violations: usize,
    /// `None` when the anomaly search was skipped.
    pub anomalies: Option<usize>,
    pub details: Vec<String>,
}

impl Verdict {
    pub fn ok(&self) -> bool {
        self.convergence && self.monotone_violations == 0
    }
}

/// Runs all three trace checks. An anomaly search over too many ops is
/// skipped and noted rather than failing the whole check.
pub fn check_trace(trace: &Trace, opts: AnomalyOptions) -> Result<Verdict, CheckError> {
    trace.validate()?;
    let conv = check_convergence(trace)?;
    let mono = check_monotone_definitive(trace)?;
    let mut details = conv.details.clone();
    details.extend(mono.iter().map(|v| {
        format!(
            "monotone violation: round {} at {} (t={}) answered true for {}, final join gives {}",
            v.round, v.replica, v.time, v.query, v.final_value
        )
    }));
    let anomalies = match count_nonmonotone_anomalies(trace, opts) {
        Ok(r) => {
            details.extend(r.anomalies.iter().map(|a| {
                format!(
                    "anomaly: round {} at {} (t={}, session {}) saw {} for {}",
                    a.round, a.replica, a.time, a.session, a.observed, a.query
                )
            }));
            Some(r.anomalies.len())
        }
        Err(CheckError::BoundExceeded { ops, bound }) => {
            details.push(format!("anomaly search skipped: {ops} ops exceed the bound of {bound}"));
            None
        }
        Err(e) => return Err(e),
    };
    Ok(Verdict {
        convergence: conv.pass,
        monotone_violations: mono.len(),
        anomalies,
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::QuerySpec;
    use crate::scenario::Scenario;
    use crate::trace::TraceRecord;
    use crate::Element;

    fn cart_keys() -> BTreeMap<String, LatticeType> {
        BTreeMap::from([("cart".to_owned(), LatticeType::TwoPSet)])
    }

    fn pf_ops() -> Vec<OracleOp> {
        let op = |o: Op| OracleOp {
            origin: ReplicaId(0),
            key: "cart".into(),
            op: o,
            after: vec![],
        };
        vec![
            op(Op::TwopsetAdd { element: "p".into() }),
            op(Op::TwopsetAdd { element: "f".into() }),
            op(Op::TwopsetRemove { element: "f".into() }),
        ]
    }

    #[test]
    fn contents_regresses_in_some_order() {
        let q = bind(&QuerySpec::Named { query: "contents".into(), key: "cart".into() }, &cart_keys()).unwrap();
        let r = enumerate_delivery_orders(&pf_ops(), 2, &cart_keys(), &q, DEFAULT_ORDER_BOUND).unwrap();
        assert_eq!(r.orders, 1);
        let reg = r.regression.unwrap();
        assert_eq!(reg.before, QueryValue::Set([Element::text("f"), Element::text("p")].into()));
        assert_eq!(reg.after, QueryValue::Set([Element::text("p")].into()));
    }

    #[test]
    fn threshold_never_violates() {
        let q = bind(&QuerySpec::Dsl { dsl: "PLUS(COUNT(cart.adds), COUNT(cart.removes)) >= 3".into() }, &cart_keys()).unwrap();
        let mut ops = pf_ops();
        ops[2].origin = ReplicaId(1);
        ops[2].after = vec![1];
        let r = enumerate_delivery_orders(&ops, 2, &cart_keys(), &q, DEFAULT_ORDER_BOUND).unwrap();
        assert_eq!(r.definitive_violations, 0);
        assert!(r.regression.is_none());
        assert!(r.outcomes.contains(&QueryValue::Bool(true)));
    }

    #[test]
    fn single_op_single_order() {
        let q = bind(&QuerySpec::Named { query: "contents".into(), key: "cart".into() }, &cart_keys()).unwrap();
        let r = enumerate_delivery_orders(&pf_ops()[..1], 1, &cart_keys(), &q, DEFAULT_ORDER_BOUND).unwrap();
        assert_eq!(r.orders, 1);
        assert!(r.regression.is_none());
    }

    #[test]
    fn oracle_rejects_bad_input() {
        let q = bind(&QuerySpec::Named { query: "contents".into(), key: "cart".into() }, &cart_keys()).unwrap();
        let mut ops = pf_ops();
        ops[0].after = vec![2];
        assert!(matches!(
            enumerate_delivery_orders(&ops, 1, &cart_keys(), &q, 6),
            Err(CheckError::BadDependency { .. })
        ));
        assert!(matches!(
            enumerate_delivery_orders(&pf_ops(), 1, &cart_keys(), &q, 2),
            Err(CheckError::BoundExceeded { .. })
        ));
    }

    const EMPTY: &str = r#"
{"kind":"config","replicas":2}
{"kind":"key","name":"cart","type":"twopset"}
"#;

    #[test]
    fn empty_workload_passes_everything() {
        let t = Scenario::parse(EMPTY).unwrap().run().unwrap().trace;
        let v = check_trace(&t, AnomalyOptions::default()).unwrap();
        assert!(v.ok());
        assert_eq!(v.anomalies, Some(0));
    }

    #[test]
    fn corrupted_final_state_fails_convergence() {
        let text = format!(
            "{EMPTY}{}",
            r#"{"kind":"op","at":1,"replica":0,"key":"cart","op":"twopset_add","args":["x"]}"#
        );
        let mut t = Scenario::parse(&text).unwrap().run().unwrap().trace;
        assert!(check_convergence(&t).unwrap().pass);
        if let Some(TraceRecord::FinalStates { stores, .. }) = t.records.last_mut() {
            stores[1] = empty_store(&cart_keys());
        }
        let v = check_convergence(&t).unwrap();
        assert!(!v.pass);
        assert!(v.details[0].starts_with("r1: key 'cart'"));
    }

    #[test]
    fn unquiesced_trace_is_an_error() {
        let mut t = Scenario::parse(EMPTY).unwrap().run().unwrap().trace;
        t.records.pop();
        assert!(matches!(check_convergence(&t), Err(CheckError::Trace(TraceError::NotQuiesced))));
    }
}
