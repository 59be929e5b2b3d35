use serde::{Deserialize, Serialize};

use super::{evaluate, PlanMode, QueryPlan};
use crate::coordination::{coordinated_read, CoordinationError, ReadStrategy};
use crate::query::{QueryError, QueryOutcome, QueryValue};
use crate::{ReplicaId, Store};

/// Result of running a plan against a set of replica states.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Execution {
    Threshold { outcome: QueryOutcome },
    /// Local value; may be stale but never exceeds the global join.
    LowerBound { value: QueryValue },
    Coordinated { value: QueryValue },
    Unavailable,
}

/// Runs `plan` at replica `at`. `stores[i]` is replica `i`'s state and
/// `reachable[i]` whether it answers a coordinated read. Never mutates state.
pub fn execute(
    plan: &QueryPlan,
    stores: &[Store],
    at: ReplicaId,
    rs: ReadStrategy,
    reachable: &[bool],
) -> Result<Execution, QueryError> {
    let local = stores
        .get(at.index())
        .ok_or_else(|| QueryError::UnboundSource(at.to_string()))?;
    match plan.mode {
        PlanMode::LocalThreshold => Ok(Execution::Threshold {
            outcome: match evaluate(&plan.ast, local)? {
                QueryValue::Bool(true) => QueryOutcome::Ready(QueryValue::Bool(true)),
                _ => QueryOutcome::Unknown,
            },
        }),
        PlanMode::LocalLowerBound => Ok(Execution::LowerBound {
            value: evaluate(&plan.ast, local)?,
        }),
        PlanMode::Coordinated => {
            match coordinated_read(rs, at, stores, reachable, |s| evaluate(&plan.ast, s)) {
                Ok(value) => Ok(Execution::Coordinated { value }),
                Err(CoordinationError::Unavailable { .. }) => Ok(Execution::Unavailable),
                Err(CoordinationError::Query(e)) => Err(e),
                Err(e) => Err(QueryError::Dsl(e.to_string())),
            }
        }
    }
}
