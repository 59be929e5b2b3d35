use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{registry, LatticeFn, QueryError, QueryValue};
use crate::dsl::{self, Node, PlanMode, Sort};
use crate::lattice::LatticeType;
use crate::Store;

/// How a scenario or trace names a query: a registry entry applied to one
/// key, or a DSL text over any number of keys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QuerySpec {
    Named { query: String, key: String },
    Dsl { dsl: String },
}

impl fmt::Display for QuerySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuerySpec::Named { query, key } => write!(f, "{query}@{key}"),
            QuerySpec::Dsl { dsl } => f.write_str(dsl),
        }
    }
}

#[derive(Clone, Debug)]
enum Evaluator {
    Named { key: String, function: LatticeFn },
    Dsl(Node),
}

/// A query resolved against a store schema.
#[derive(Clone, Debug)]
pub struct BoundQuery {
    pub spec: QuerySpec,
    pub keys: Vec<String>,
    pub monotone: bool,
    pub threshold: bool,
    eval: Evaluator,
}

impl BoundQuery {
    pub fn eval(&self, store: &Store) -> Result<QueryValue, QueryError> {
        match &self.eval {
            Evaluator::Named { key, function } => {
                let v = store.get(key).ok_or_else(|| QueryError::UnboundSource(key.clone()))?;
                function.apply(v)
            }
            Evaluator::Dsl(ast) => dsl::evaluate(ast, store),
        }
    }

    pub fn default_mode(&self, stale_tolerant: bool) -> PlanMode {
        dsl::plan_mode(self.monotone, self.threshold, stale_tolerant)
    }

    pub fn ast(&self) -> Option<&Node> {
        match &self.eval {
            Evaluator::Dsl(ast) => Some(ast),
            Evaluator::Named { .. } => None,
        }
    }
}

pub fn bind(spec: &QuerySpec, schema: &BTreeMap<String, LatticeType>) -> Result<BoundQuery, QueryError> {
    match spec {
        QuerySpec::Named { query, key } => {
            let ty = schema.get(key).ok_or_else(|| QueryError::UnboundSource(key.clone()))?;
            let r = registry::lookup(query, ty)?;
            Ok(BoundQuery {
                spec: spec.clone(),
                keys: vec![key.clone()],
                monotone: r.monotone,
                threshold: r.threshold,
                eval: Evaluator::Named {
                    key: key.clone(),
                    function: r.function,
                },
            })
        }
        QuerySpec::Dsl { dsl: text } => {
            let ast = dsl::parse(text).map_err(|e| QueryError::Dsl(e.to_string()))?;
            dsl::check_sources(&ast, schema).map_err(|e| QueryError::Dsl(e.to_string()))?;
            let mut keys: Vec<String> = ast.sources().into_iter().map(|(k, _)| k).collect();
            keys.sort();
            keys.dedup();
            Ok(BoundQuery {
                spec: spec.clone(),
                keys,
                monotone: dsl::classify(&ast).is_monotone(),
                threshold: ast.sort() == Sort::Bool,
                eval: Evaluator::Dsl(ast),
            })
        }
    }
}
