//! Evidence for classifier verdicts.
//!
//! For monotone verdicts, [`check_sampled`] runs the compiled evaluator on
//! random ordered state pairs. For non-monotone verdicts,
//! [`find_counterexample`] searches small structured states for a concrete
//! pair `lower <= upper` whose results go backwards.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Number, Value};

use super::ast::{Literal, Node, Projection, Term};
use super::eval::{evaluate, term_holds};
use crate::lattice::{GSet, LatticeType, LatticeValue, TwoPSet};
use crate::query::{gen, QueryError, QueryValue};
use crate::{Element, Store};

const VARIANT_FIELD: &str = "__n";
const MAX_VECTORS: usize = 50_000;
const RANDOM_TRIES: usize = 2_000;

/// States `lower <= upper` with `f(lower) <= f(upper)` false.
#[derive(Clone, Debug, PartialEq)]
pub struct Counterexample {
    pub lower: Store,
    pub upper: Store,
    pub f_lower: QueryValue,
    pub f_upper: QueryValue,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledReport {
    pub pairs_checked: usize,
    pub violations: Vec<Counterexample>,
}

fn empty_store(schema: &BTreeMap<String, LatticeType>) -> Store {
    Store::new(schema.iter().map(|(k, t)| (k.as_str(), t)))
}

fn insert(store: &mut Store, name: &str, projection: Option<Projection>, e: Element) {
    let delta: LatticeValue = match projection {
        None => GSet::singleton(e).into(),
        Some(Projection::Adds) => TwoPSet {
            adds: GSet::singleton(e),
            removes: GSet::new(),
        }
        .into(),
        Some(Projection::Removes) => TwoPSet {
            adds: GSet::new(),
            removes: GSet::singleton(e),
        }
        .into(),
    };
    // sources were checked against the schema by the caller
    let _ = store.apply(name, &delta);
}

fn instance(template: &Map<String, Value>, n: usize) -> Element {
    let mut obj = template.clone();
    obj.insert(VARIANT_FIELD.to_owned(), Value::from(n as u64));
    Element::from_json(&Value::Object(obj))
}

fn number(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        Value::from(v as i64)
    } else {
        Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
    }
}

/// A field value satisfying every term on that field, if one is easy to find.
fn satisfy(terms: &[&Term]) -> Option<Value> {
    let mut candidates = Vec::new();
    for t in terms {
        match &t.literal {
            Literal::Num(n) => {
                for d in [0.0, 1.0, -1.0, 0.5, -0.5] {
                    candidates.push(number(n + d));
                }
            }
            Literal::Str(s) => {
                candidates.push(Value::from(s.clone()));
                candidates.push(Value::from(format!("{s}~")));
                candidates.push(Value::from(format!("{s}a")));
            }
        }
    }
    candidates.push(Value::from(0));
    candidates.push(Value::from(""));
    candidates.push(Value::from("~~~~"));
    candidates.into_iter().find(|c| {
        terms.iter().all(|t| {
            let mut probe = Map::new();
            probe.insert(t.field.clone(), c.clone());
            term_holds(t, &Value::Object(probe))
        })
    })
}

fn synthesize(terms: &[&Term]) -> Option<Map<String, Value>> {
    let mut by_field: BTreeMap<&str, Vec<&Term>> = BTreeMap::new();
    for t in terms {
        by_field.entry(t.field.as_str()).or_default().push(t);
    }
    let mut obj = Map::new();
    for (field, ts) in by_field {
        obj.insert(field.to_owned(), satisfy(&ts)?);
    }
    Some(obj)
}

/// Record shapes worth trying: one per filter, one satisfying all filters at
/// once, and a blank record.
fn templates(ast: &Node) -> Vec<Map<String, Value>> {
    let mut nodes = Vec::new();
    ast.walk(&mut nodes);
    let mut all_terms = Vec::new();
    let mut out = Vec::new();
    for n in nodes {
        if let Node::Filter { predicate, .. } = n {
            let terms: Vec<&Term> = predicate.terms.iter().collect();
            all_terms.extend(terms.iter().copied());
            out.extend(synthesize(&terms));
        }
    }
    out.extend(synthesize(&all_terms));
    out.push(Map::new());
    let mut unique = Vec::new();
    for t in out {
        if !unique.contains(&t) {
            unique.push(t);
        }
    }
    unique
}

fn count_candidates(ast: &Node) -> Vec<usize> {
    let mut nodes = Vec::new();
    ast.walk(&mut nodes);
    let mut c = vec![0usize, 1, 2];
    for n in nodes {
        if let Node::Compare { literal, .. } = n {
            let l = (*literal).min(200) as usize;
            c.extend([l.saturating_sub(1), l, l + 1, l + 2]);
        }
    }
    c.sort_unstable();
    c.dedup();
    c
}

fn vectors(dims: usize, values: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..dims {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Searches for a regression pair. Returns `None` if the query is
/// non-monotone only syntactically (e.g. an unsatisfiable filter) or if the
/// bounded search misses it.
pub fn find_counterexample(ast: &Node, schema: &BTreeMap<String, LatticeType>) -> Option<Counterexample> {
    let parts = ast.sources();
    let mut values = count_candidates(ast);
    while values.len() > 2 && values.len().pow(parts.len() as u32) > MAX_VECTORS {
        values.pop();
    }
    let build = |template: &Map<String, Value>, v: &[usize]| {
        let mut store = empty_store(schema);
        for ((name, proj), c) in parts.iter().zip(v) {
            for k in 0..*c {
                insert(&mut store, name, *proj, instance(template, k));
            }
        }
        store
    };
    for template in templates(ast) {
        let mut cache: HashMap<Vec<usize>, QueryValue> = HashMap::new();
        let mut eval_at = |v: &Vec<usize>| -> Option<QueryValue> {
            if let Some(r) = cache.get(v) {
                return Some(r.clone());
            }
            let r = evaluate(ast, &build(&template, v)).ok()?;
            cache.insert(v.clone(), r.clone());
            Some(r)
        };
        for v in vectors(parts.len(), &values) {
            for p in 0..parts.len() {
                let idx = values.iter().position(|x| *x == v[p]).expect("drawn from values");
                let Some(next) = values.get(idx + 1) else { continue };
                let mut w = v.clone();
                w[p] = *next;
                let (fl, fu) = (eval_at(&v)?, eval_at(&w)?);
                if fl.leq(&fu) != Some(true) {
                    return Some(Counterexample {
                        lower: build(&template, &v),
                        upper: build(&template, &w),
                        f_lower: fl,
                        f_upper: fu,
                    });
                }
            }
        }
    }
    random_search(ast, schema, 0xC0FFEE)
}

fn random_element<R: Rng>(templates: &[Map<String, Value>], rng: &mut R) -> Element {
    if rng.gen_bool(0.5) {
        let t = &templates[rng.gen_range(0..templates.len())];
        instance(t, rng.gen_range(0..20))
    } else {
        gen::random_element(rng)
    }
}

fn random_env<R: Rng>(
    ast: &Node,
    schema: &BTreeMap<String, LatticeType>,
    templates: &[Map<String, Value>],
    rng: &mut R,
) -> Store {
    let mut store = empty_store(schema);
    for (name, proj) in ast.sources() {
        let n = rng.gen_range(0..12);
        for _ in 0..n {
            insert(&mut store, &name, proj, random_element(templates, rng));
        }
    }
    store
}

fn random_search(ast: &Node, schema: &BTreeMap<String, LatticeType>, seed: u64) -> Option<Counterexample> {
    let report = check_sampled(ast, schema, RANDOM_TRIES, seed).ok()?;
    report.violations.into_iter().next()
}

/// Evaluates `ast` on `n_pairs` random ordered pairs and collects every
/// regression.
pub fn check_sampled(
    ast: &Node,
    schema: &BTreeMap<String, LatticeType>,
    n_pairs: usize,
    seed: u64,
) -> Result<SampledReport, QueryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = templates(ast);
    let mut violations = Vec::new();
    for _ in 0..n_pairs {
        let lower = random_env(ast, schema, &templates, &mut rng);
        let extra = random_env(ast, schema, &templates, &mut rng);
        let upper = lower.merge(&extra)?;
        let (fl, fu) = (evaluate(ast, &lower)?, evaluate(ast, &upper)?);
        if fl.leq(&fu) != Some(true) {
            violations.push(Counterexample {
                lower,
                upper,
                f_lower: fl,
                f_upper: fu,
            });
        }
    }
    Ok(SampledReport {
        pairs_checked: n_pairs,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{infer_schema, parse};

    fn witness(text: &str) -> Option<Counterexample> {
        let ast = parse(text).unwrap();
        find_counterexample(&ast, &infer_schema(&ast).unwrap())
    }

    #[test]
    fn except_regresses() {
        let cx = witness("EXCEPT(cart.adds, cart.removes)").unwrap();
        assert!(cx.lower.leq(&cx.upper).unwrap());
        assert_ne!(cx.f_lower.leq(&cx.f_upper), Some(true));
    }

    #[test]
    fn equality_threshold_regresses() {
        let cx = witness("COUNT(x) == 0").unwrap();
        assert_eq!(cx.f_lower, QueryValue::Bool(true));
        assert_eq!(cx.f_upper, QueryValue::Bool(false));
    }

    #[test]
    fn filtered_upper_bound_regresses() {
        let cx = witness(r#"COUNT(FILTER(txns, type == "GIFTCARD" AND amount > 100)) < 7"#).unwrap();
        assert_eq!(cx.f_lower, QueryValue::Bool(true));
    }

    #[test]
    fn unsatisfiable_filter_has_no_witness() {
        assert!(witness("COUNT(FILTER(x, a > 5 AND a < 3)) == 0").is_none());
    }

    #[test]
    fn monotone_query_survives_sampling() {
        let ast = parse(r#"COUNT(FILTER(txns, type == "GIFTCARD" AND amount > 100)) > 2"#).unwrap();
        let r = check_sampled(&ast, &infer_schema(&ast).unwrap(), 500, 7).unwrap();
        assert!(r.violations.is_empty());
    }
}
