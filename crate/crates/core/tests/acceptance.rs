//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Time limits are pinned below.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use common::*;
use monostore::checker::{
    check_convergence, check_monotone_definitive, count_nonmonotone_anomalies, enumerate_delivery_orders,
    AnomalyOptions, OracleOp,
};
use monostore::coordination::Choice;
use monostore::dsl::witness::{check_sampled, find_counterexample};
use monostore::dsl::{classify, evaluate, infer_schema, parse, MonotonicityClass};
use monostore::lattice::{GCounter, GSet, LatticeType, LatticeValue, TwoPSet};
use monostore::metrics::metrics;
use monostore::polog::{op_interpreter, CausalBuffer, LogNode, LogRecord, OpId, PoLog};
use monostore::query::gen::{grow, random_value};
use monostore::query::{bind, QuerySpec, QueryValue};
use monostore::scenario::Overrides;
use monostore::sim::GossipMode;
use monostore::{Element, Lattice, Op, ReplicaId, Store};
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACI_CASES: u32 = 1000;
const ACI_LIMIT: Duration = Duration::from_secs(10);
const CONVERGENCE_SEEDS: u64 = 100;
const CONVERGENCE_LIMIT: Duration = Duration::from_secs(60);
const SAFETY_SEEDS: u64 = 200;
const SAFETY_LIMIT: Duration = Duration::from_secs(120);
const ANOMALY_SEEDS: u64 = 20;
const ANOMALY_LIMIT: Duration = Duration::from_secs(30);
const SAMPLED_PAIRS: usize = 500;
const MIN_CORPUS: usize = 20;
const REPLAY_SETS: usize = 50;
const MAX_ORACLE_OPS: usize = 6;

type Outcome = Result<String, String>;

struct Criterion {
    number: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

#[test]
fn acceptance() {
    let criteria = [
        Criterion {
            number: 1,
            name: "aci-suite",
            limit: Some(ACI_LIMIT),
            run: aci_suite,
        },
        Criterion {
            number: 2,
            name: "convergence-under-faults",
            limit: Some(CONVERGENCE_LIMIT),
            run: convergence_under_faults,
        },
        Criterion {
            number: 3,
            name: "monotone-safety",
            limit: Some(SAFETY_LIMIT),
            run: monotone_safety,
        },
        Criterion {
            number: 4,
            name: "anomaly-witness",
            limit: Some(ANOMALY_LIMIT),
            run: anomaly_witness,
        },
        Criterion {
            number: 5,
            name: "classifier-corpus",
            limit: None,
            run: classifier_corpus,
        },
        Criterion {
            number: 6,
            name: "delta-efficiency",
            limit: None,
            run: delta_efficiency,
        },
        Criterion {
            number: 7,
            name: "determinism",
            limit: None,
            run: determinism,
        },
        Criterion {
            number: 8,
            name: "replay-equivalence",
            limit: None,
            run: replay_equivalence,
        },
    ];
    let mut failed = Vec::new();
    for c in criteria {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let took = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, c.limit) {
            if took > limit {
                outcome = Err(format!("{detail}; took {took:.1?}, limit {limit:?}"));
            }
        }
        let budget = c.limit.map(|l| format!(" limit {l:?}")).unwrap_or_default();
        let line = match outcome {
            Ok(detail) => format!("PASS {} {}: {detail} ({took:.1?}{budget})", c.number, c.name),
            Err(why) => {
                failed.push(c.number);
                format!("FAIL {} {}: {why} ({took:.1?}{budget})", c.number, c.name)
            }
        };
        // straight to stdout so the verdicts show without --nocapture
        let _ = writeln!(std::io::stdout().lock(), "{line}");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1

fn run_laws<S, F>(name: &str, strategy: S, check: F) -> Result<(), String>
where
    S: Strategy,
    F: Fn(S::Value) -> Result<(), String>,
{
    let mut runner = TestRunner::new(Config {
        cases: ACI_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |v| {
            check(v).map_err(proptest::test_runner::TestCaseError::fail)
        })
        .map_err(|e| format!("{name}: {e}"))
}

fn aci_suite() -> Outcome {
    run_laws("gset", (gset(), gset(), gset()), |(a, b, c)| laws(&a, &b, &c))?;
    run_laws("twopset", (twopset(), twopset(), twopset()), |(a, b, c)| laws(&a, &b, &c))?;
    run_laws("gcounter", (gcounter(), gcounter(), gcounter()), |(a, b, c)| laws(&a, &b, &c))?;
    run_laws("pncounter", (pncounter(), pncounter(), pncounter()), |(a, b, c)| laws(&a, &b, &c))?;
    run_laws("maxnat", (maxnat(), maxnat(), maxnat()), |(a, b, c)| laws(&a, &b, &c))?;
    run_laws("bool", (boolean(), boolean(), boolean()), |(a, b, c)| laws(&a, &b, &c))?;
    run_laws("map", (map_of_counters(), map_of_counters(), map_of_counters()), |(a, b, c)| {
        value_laws(&a, &b, &c)
    })?;
    run_laws("polog", polog_triple(), |(a, b, c)| laws(&a, &b, &c))?;
    run_laws(
        "version_vector",
        (version_vector(), version_vector(), version_vector()),
        |(a, b, c)| laws(&a, &b, &c),
    )?;
    Ok(format!("9 types x {ACI_CASES} cases, 0 failures"))
}

// 2

fn convergence_under_faults() -> Outcome {
    let sc = scenario("mixed");
    ensure(sc.config.p_drop == 0.3 && sc.config.p_dup == 0.5, || "mixed.scn fault rates changed".into())?;
    ensure(sc.workload.items.len() >= 50, || "mixed.scn lost ops".into())?;
    let mut runs = 0;
    for gossip in [GossipMode::Full, GossipMode::Delta] {
        for seed in 0..CONVERGENCE_SEEDS {
            let o = Overrides {
                seed: Some(seed),
                gossip: Some(gossip),
                ..Default::default()
            };
            let out = sc.with(&o).run().map_err(|e| format!("{gossip} seed {seed}: {e}"))?;
            let canon: BTreeSet<String> = out.replicas.iter().map(|r| r.store().to_canonical()).collect();
            ensure(canon.len() == 1, || format!("{gossip} seed {seed}: replicas differ"))?;
            let v = check_convergence(&out.trace).map_err(|e| e.to_string())?;
            ensure(v.pass, || format!("{gossip} seed {seed}: {:?}", v.details))?;
            runs += 1;
        }
    }
    Ok(format!("{runs} runs, replicas byte-identical and equal to the join of all ops"))
}

// 3

/// The gift-card threshold and the rate limiter, scaled so six ops can cross the bar.
fn small_threshold_workloads(rng: &mut ChaCha8Rng) -> Vec<(String, BTreeMap<String, LatticeType>, Vec<OracleOp>)> {
    let txn = |kind: &str, amount: u64| {
        Element::from_json(&serde_json::json!({"type": kind, "amount": amount, "id": rng_id()}))
    };
    let mut out = Vec::new();
    let n_ops = rng.gen_range(4..=MAX_ORACLE_OPS);
    let ops = (0..n_ops)
        .map(|i| {
            let (kind, amount) = [("GIFTCARD", 150), ("GIFTCARD", 50), ("BOOK", 500)][rng.gen_range(0..3)];
            let element = if i < 3 { txn("GIFTCARD", 101 + i as u64) } else { txn(kind, amount) };
            OracleOp {
                origin: ReplicaId(rng.gen_range(0..3)),
                key: "txns".into(),
                op: Op::GsetAdd { element },
                after: Vec::new(),
            }
        })
        .collect();
    out.push((
        r#"COUNT(FILTER(txns, type == "GIFTCARD" AND amount > 100)) > 2"#.to_owned(),
        BTreeMap::from([("txns".to_owned(), LatticeType::GSet)]),
        ops,
    ));
    let n_ops = rng.gen_range(4..=MAX_ORACLE_OPS);
    let ops = (0..n_ops)
        .map(|i| {
            let element = Element::text(&format!("req{}", rng.gen_range(0..4)));
            let op = if i % 2 == 0 {
                Op::TwopsetAdd { element }
            } else {
                Op::TwopsetRemove { element }
            };
            OracleOp {
                origin: ReplicaId(rng.gen_range(0..3)),
                key: "cart".into(),
                op,
                after: Vec::new(),
            }
        })
        .collect();
    out.push((
        "PLUS(COUNT(cart.adds), COUNT(cart.removes)) > 2".to_owned(),
        BTreeMap::from([("cart".to_owned(), LatticeType::TwoPSet)]),
        ops,
    ));
    out
}

fn rng_id() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(0);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

/// Final join computed directly from the ops, without the oracle.
fn direct_join(keys: &BTreeMap<String, LatticeType>, ops: &[OracleOp]) -> Store {
    let mut store = Store::new(keys.iter().map(|(k, t)| (k.as_str(), t)));
    for o in ops {
        let d = match &o.op {
            Op::GsetAdd { element } => LatticeValue::from(GSet::singleton(element.clone())),
            Op::TwopsetAdd { element } => {
                let mut s = TwoPSet::default();
                s.add(element.clone());
                s.into()
            }
            Op::TwopsetRemove { element } => {
                let mut s = TwoPSet::default();
                s.remove(element.clone());
                s.into()
            }
            other => panic!("no direct join for {other:?}"),
        };
        store.apply(&o.key, &d).expect("schema key");
    }
    store
}

fn monotone_safety() -> Outcome {
    let mut runs = 0;
    let mut ready = 0;
    for name in BUNDLED {
        let sc = scenario(name);
        for seed in 0..SAFETY_SEEDS {
            let out = sc.with(&seeded(seed)).run().map_err(|e| format!("{name} seed {seed}: {e}"))?;
            let v = check_monotone_definitive(&out.trace).map_err(|e| e.to_string())?;
            ensure(v.is_empty(), || format!("{name} seed {seed}: {v:?}"))?;
            ready += out
                .trace
                .queries()
                .iter()
                .filter(|q| q.answer == Some(monostore::trace::Answer::Ready { value: QueryValue::Bool(true) }))
                .count();
            runs += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut orders = 0;
    let mut sets = 0;
    let mut reached = 0;
    for _ in 0..10 {
        for (text, keys, ops) in small_threshold_workloads(&mut rng) {
            let q = bind(&QuerySpec::Dsl { dsl: text.clone() }, &keys).map_err(|e| e.to_string())?;
            let report =
                enumerate_delivery_orders(&ops, 3, &keys, &q, MAX_ORACLE_OPS).map_err(|e| format!("{text}: {e}"))?;
            let truth = evaluate(&parse(&text).unwrap(), &direct_join(&keys, &ops)).map_err(|e| e.to_string())?;
            ensure(report.final_value == truth, || format!("{text}: oracle final {} vs {truth}", report.final_value))?;
            ensure(report.definitive_violations == 0, || format!("{text}: ready(true) not implied by the final join"))?;
            ensure(report.regression.is_none(), || format!("{text}: regressed {:?}", report.regression))?;
            if report.outcomes.contains(&QueryValue::Bool(true)) {
                ensure(truth == QueryValue::Bool(true), || format!("{text}: true on a prefix, {truth} at the end"))?;
                reached += 1;
            }
            orders += report.orders;
            sets += 1;
        }
    }
    ensure(reached > 0, || "no small workload ever crossed its threshold".into())?;
    Ok(format!(
        "{runs} runs, {ready} ready(true) answers, 0 violations; {sets} op sets ({reached} cross the bar), {orders} delivery orders"
    ))
}

// 4

fn fixed(write: &str, read: &str) -> Result<Overrides, String> {
    Ok(Overrides {
        write: Some(Choice::Fixed(write.parse().map_err(|e| format!("{e}"))?)),
        read: Some(Choice::Fixed(read.parse().map_err(|e| format!("{e}"))?)),
        ..Default::default()
    })
}

fn anomalies_over_seeds(write: &str, read: &str) -> Result<usize, String> {
    let sc = scenario("potato_ferrari").with(&fixed(write, read)?);
    let mut total = 0;
    for seed in 0..ANOMALY_SEEDS {
        let out = sc.with(&seeded(seed)).run().map_err(|e| e.to_string())?;
        let r = count_nonmonotone_anomalies(&out.trace, AnomalyOptions::default()).map_err(|e| e.to_string())?;
        ensure(r.checked == 1, || format!("{write}/{read} seed {seed}: checked {}", r.checked))?;
        total += r.anomalies.len();
    }
    Ok(total)
}

fn anomaly_witness() -> Outcome {
    let unsafe_pair = anomalies_over_seeds("write_one", "read_one")?;
    ensure(unsafe_pair >= 1, || "write_one/read_one showed no anomaly".into())?;
    for (w, r) in [
        ("write_one", "read_all"),
        ("write_quorum:2", "read_quorum:2"),
        ("write_all", "read_one"),
    ] {
        let n = anomalies_over_seeds(w, r)?;
        ensure(n == 0, || format!("{w}/{r} showed {n} anomalies"))?;
    }
    let keys = BTreeMap::from([("cart".to_owned(), LatticeType::TwoPSet)]);
    let op = |o: Op| OracleOp {
        origin: ReplicaId(0),
        key: "cart".into(),
        op: o,
        after: Vec::new(),
    };
    let ops = vec![
        op(Op::TwopsetAdd { element: Element::text("potato") }),
        op(Op::TwopsetAdd { element: Element::text("ferrari") }),
        op(Op::TwopsetRemove { element: Element::text("ferrari") }),
    ];
    let q = bind(
        &QuerySpec::Named {
            query: "contents".into(),
            key: "cart".into(),
        },
        &keys,
    )
    .map_err(|e| e.to_string())?;
    let report = enumerate_delivery_orders(&ops, 1, &keys, &q, MAX_ORACLE_OPS).map_err(|e| e.to_string())?;
    let reg = report.regression.ok_or("no regression interleaving for contents")?;
    ensure(reg.before.leq(&reg.after) == Some(false), || "reported regression is not one".into())?;
    Ok(format!(
        "write_one/read_one: {unsafe_pair} anomalies over {ANOMALY_SEEDS} seeds; overlapping pairs: 0; regression {} -> {}",
        reg.before, reg.after
    ))
}

// 5

const CORPUS: &[(&str, Option<&str>)] = &[
    (r#"COUNT(FILTER(txns, type == "GIFTCARD" AND amount > 100)) > 50"#, None),
    ("PLUS(COUNT(cart.adds), COUNT(cart.removes)) > 100", None),
    ("EXCEPT(cart.adds, cart.removes)", Some("root")),
    ("UNION(a, b)", None),
    ("INTERSECT(a, b)", None),
    ("FILTER(txns, amount >= 10)", None),
    ("PROJECT(txns, type)", None),
    ("COUNT(a)", None),
    ("COUNT(a) > 3", None),
    ("COUNT(a) >= 3", None),
    ("COUNT(a) < 3", Some("root")),
    ("COUNT(a) <= 3", Some("root")),
    ("COUNT(a) == 3", Some("root")),
    ("COUNT(EXCEPT(a, b)) > 1", Some("root.0.0")),
    ("UNION(a, EXCEPT(b, c))", Some("root.1")),
    (r#"FILTER(txns, type != "BOOK")"#, None),
    ("FILTER(txns, amount < 100)", None),
    ("PLUS(COUNT(a), COUNT(b)) > 10", None),
    ("COUNT(INTERSECT(cart.adds, cart.removes)) > 0", None),
    (r#"COUNT(FILTER(txns, type == "GIFTCARD")) < 7"#, Some("root")),
    ("INTERSECT(a, EXCEPT(a, b))", Some("root.1")),
    ("PROJECT(FILTER(txns, amount > 5), type, amount)", None),
    ("COUNT(UNION(cart.adds, cart.removes)) >= 2", None),
    (
        r#"EXCEPT(FILTER(txns, amount > 100), FILTER(refunds, type == "BOOK"))"#,
        Some("root"),
    ),
];

fn leq_store(a: &Store, b: &Store) -> bool {
    a.merge(b).map(|j| &j == b).unwrap_or(false)
}

/// Independent sampler: random states from the library generator, grown by a
/// random join, evaluated directly.
fn sampled_regressions(text: &str, seed: u64) -> Result<usize, String> {
    let ast = parse(text).map_err(|e| e.to_string())?;
    let schema = infer_schema(&ast).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..SAMPLED_PAIRS {
        let mut lower = Store::new(schema.iter().map(|(k, t)| (k.as_str(), t)));
        let mut upper = lower.clone();
        for (k, t) in &schema {
            let v = random_value(t, &mut rng);
            lower.apply(k, &v).map_err(|e| e.to_string())?;
            upper.apply(k, &grow(&v, &mut rng)).map_err(|e| e.to_string())?;
        }
        let (fl, fu) = (evaluate(&ast, &lower), evaluate(&ast, &upper));
        let (fl, fu) = (fl.map_err(|e| e.to_string())?, fu.map_err(|e| e.to_string())?);
        if fl.leq(&fu) != Some(true) {
            bad += 1;
        }
    }
    Ok(bad)
}

fn classifier_corpus() -> Outcome {
    ensure(CORPUS.len() >= MIN_CORPUS, || format!("corpus has {} queries", CORPUS.len()))?;
    let (mut monotone, mut non) = (0, 0);
    for (i, (text, expected)) in CORPUS.iter().enumerate() {
        let ast = parse(text).map_err(|e| format!("{text}: {e}"))?;
        let class = classify(&ast);
        let want = match expected {
            None => MonotonicityClass::Monotone,
            Some(w) => MonotonicityClass::NonMonotone { witness: (*w).into() },
        };
        ensure(class == want, || format!("{text}: got {class}, want {want}"))?;
        let schema = infer_schema(&ast).map_err(|e| e.to_string())?;
        if class.is_monotone() {
            let lib = check_sampled(&ast, &schema, SAMPLED_PAIRS, i as u64).map_err(|e| e.to_string())?;
            ensure(lib.violations.is_empty(), || format!("{text}: sampled regression {:?}", lib.violations[0]))?;
            let own = sampled_regressions(text, 1000 + i as u64)?;
            ensure(own == 0, || format!("{text}: {own} regressions in independent sampling"))?;
            monotone += 1;
        } else {
            let cx = find_counterexample(&ast, &schema).ok_or_else(|| format!("{text}: no counterexample"))?;
            ensure(leq_store(&cx.lower, &cx.upper), || format!("{text}: counterexample states not ordered"))?;
            let fl = evaluate(&ast, &cx.lower).map_err(|e| e.to_string())?;
            let fu = evaluate(&ast, &cx.upper).map_err(|e| e.to_string())?;
            ensure(fl == cx.f_lower && fu == cx.f_upper, || format!("{text}: counterexample values wrong"))?;
            ensure(fl.leq(&fu) == Some(false), || format!("{text}: {fl} <= {fu}, not a counterexample"))?;
            non += 1;
        }
    }
    Ok(format!(
        "{} queries ({monotone} monotone sampled at {SAMPLED_PAIRS} pairs, {non} non-monotone with counterexamples), 0 mismatches",
        CORPUS.len()
    ))
}

// 6

fn delta_efficiency() -> Outcome {
    let sc = scenario("bulk");
    ensure(sc.config.replicas == 3, || "bulk.scn is not 3 replicas".into())?;
    ensure(sc.workload.items.iter().filter(|i| matches!(i, monostore::sim::WorkloadItem::Op(_))).count() == 200, || {
        "bulk.scn does not have 200 ops".into()
    })?;
    let seed = sc.config.seed;
    let run = |gossip: GossipMode, prune: bool| {
        let o = Overrides {
            gossip: Some(gossip),
            prune: Some(prune),
            ..Default::default()
        };
        sc.with(&o).run().map_err(|e| e.to_string())
    };
    let full = run(GossipMode::Full, true)?;
    let delta = run(GossipMode::Delta, true)?;
    let unpruned = run(GossipMode::Delta, false)?;
    let mf = metrics(&full.trace, AnomalyOptions::default()).map_err(|e| e.to_string())?;
    let md = metrics(&delta.trace, AnomalyOptions::default()).map_err(|e| e.to_string())?;
    ensure(md.gossip_bytes < mf.gossip_bytes, || {
        format!("delta {} bytes, full {} bytes", md.gossip_bytes, mf.gossip_bytes)
    })?;
    ensure(full.trace.final_states() == delta.trace.final_states(), || "final states differ between modes".into())?;
    ensure(delta.trace.final_states() == unpruned.trace.final_states(), || {
        "final states differ with pruning off".into()
    })?;
    Ok(format!(
        "seed {seed}: delta {} bytes < full {} bytes ({:.0}%); final states equal across modes and pruning",
        md.gossip_bytes,
        mf.gossip_bytes,
        100.0 * md.gossip_bytes as f64 / mf.gossip_bytes as f64
    ))
}

// 7

fn determinism() -> Outcome {
    let mut runs = 0;
    for name in BUNDLED {
        for seed in [0, 1, 42] {
            for gossip in [GossipMode::Full, GossipMode::Delta] {
                let o = Overrides {
                    seed: Some(seed),
                    gossip: Some(gossip),
                    ..Default::default()
                };
                let a = scenario(name).with(&o).run().map_err(|e| e.to_string())?.trace.to_jsonl();
                let b = scenario(name).with(&o).run().map_err(|e| e.to_string())?.trace.to_jsonl();
                ensure(a == b, || format!("{name} seed {seed} {gossip}: traces differ"))?;
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} scenario/seed/mode pairs byte-identical"))
}

// 8

/// Ops on one key with a random causal DAG; `preds[i]` only names earlier ops.
struct OpSet {
    ty: LatticeType,
    nodes: Vec<(OpId, Op)>,
    preds: Vec<BTreeSet<usize>>,
}

fn random_op_set(rng: &mut ChaCha8Rng) -> OpSet {
    let ty = [LatticeType::GSet, LatticeType::TwoPSet, LatticeType::GCounter][rng.gen_range(0..3)].clone();
    let n = rng.gen_range(1..=MAX_ORACLE_OPS);
    let mut seqs = [0u64; 3];
    let mut nodes = Vec::new();
    let mut preds = Vec::new();
    for i in 0..n {
        let origin = rng.gen_range(0..3u32);
        seqs[origin as usize] += 1;
        let element = Element::text(&format!("x{}", rng.gen_range(0..4)));
        let op = match ty {
            LatticeType::GSet => Op::GsetAdd { element },
            LatticeType::TwoPSet if rng.gen_bool(0.5) => Op::TwopsetAdd { element },
            LatticeType::TwoPSet => Op::TwopsetRemove { element },
            _ => Op::CounterInc {
                replica: ReplicaId(origin),
                n: rng.gen_range(1..4),
            },
        };
        nodes.push((OpId::new(origin, seqs[origin as usize]), op));
        preds.push((0..i).filter(|_| rng.gen_bool(0.3)).collect());
    }
    OpSet { ty, nodes, preds }
}

/// The expected state, built from what each op means rather than from deltas.
fn direct_fold(set: &OpSet) -> LatticeValue {
    let mut g = GSet::new();
    let mut t = TwoPSet::default();
    let mut c: BTreeMap<ReplicaId, u64> = BTreeMap::new();
    for (_, op) in &set.nodes {
        match op {
            Op::GsetAdd { element } => {
                g.insert(element.clone());
            }
            Op::TwopsetAdd { element } => t.add(element.clone()),
            Op::TwopsetRemove { element } => t.remove(element.clone()),
            Op::CounterInc { replica, n } => *c.entry(*replica).or_default() += n,
            other => panic!("unexpected {other:?}"),
        }
    }
    match set.ty {
        LatticeType::GSet => g.into(),
        LatticeType::TwoPSet => t.into(),
        _ => {
            let mut counter = GCounter::new();
            for (r, n) in c {
                counter.inc(r, n);
            }
            counter.into()
        }
    }
}

fn topological_orders(preds: &[BTreeSet<usize>]) -> Vec<Vec<usize>> {
    fn go(preds: &[BTreeSet<usize>], order: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if order.len() == preds.len() {
            out.push(order.clone());
            return;
        }
        for i in 0..preds.len() {
            if !order.contains(&i) && preds[i].iter().all(|p| order.contains(p)) {
                order.push(i);
                go(preds, order, out);
                order.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(preds, &mut Vec::new(), &mut out);
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    topological_orders(&vec![BTreeSet::new(); n])
}

fn replay_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut orders, mut arrivals) = (0, 0);
    for case in 0..REPLAY_SETS {
        let set = random_op_set(&mut rng);
        let mut log = PoLog::new();
        let mut records = Vec::new();
        for (i, (id, op)) in set.nodes.iter().enumerate() {
            let preds: BTreeSet<OpId> = set.preds[i].iter().map(|p| set.nodes[*p].0).collect();
            log.insert(op.clone(), &preds, *id).map_err(|e| e.to_string())?;
            records.push(LogRecord {
                node: LogNode { id: *id, op: op.clone() },
                preds,
            });
        }
        let expected = direct_fold(&set);
        let bottom = LatticeValue::bottom(&set.ty);
        let default = log.replay(bottom.clone(), op_interpreter).map_err(|e| e.to_string())?;
        ensure(default == expected, || format!("case {case}: replay {default:?} vs {expected:?}"))?;
        for order in topological_orders(&set.preds) {
            let ids: Vec<OpId> = order.iter().map(|i| set.nodes[*i].0).collect();
            let v = log.replay_in_order(&ids, bottom.clone(), op_interpreter).map_err(|e| e.to_string())?;
            ensure(v == expected, || format!("case {case}: order {order:?} gives {v:?}"))?;
            orders += 1;
        }
        for perm in permutations(records.len()) {
            let mut got = PoLog::new();
            let mut buffer = CausalBuffer::new();
            for i in &perm {
                buffer.deliver(&mut got, records[*i].clone());
            }
            ensure(buffer.is_empty() && got == log, || format!("case {case}: arrival {perm:?} gives another log"))?;
            arrivals += 1;
        }
        let joined = log.join(&PoLog::bottom());
        ensure(joined == log, || format!("case {case}: join with bottom changed the log"))?;
    }
    Ok(format!(
        "{REPLAY_SETS} op sets: {orders} topological orders, {arrivals} arrival permutations, all equal"
    ))
}
