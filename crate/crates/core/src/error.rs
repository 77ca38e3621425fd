use crate::model::OperatorError;

/// Failures shared by every algorithm that re-executes operators.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("execution budget exhausted after {executions} executions (limit {limit})")]
    BudgetExhausted { executions: u64, limit: u64 },
    #[error("query cancelled")]
    Cancelled,
    #[error("operator `{operator}` failed: {source}")]
    OperatorFailure {
        operator: String,
        #[source]
        source: OperatorError,
    },
    #[error("operator `{operator}` is nondeterministic: re-execution produced a different output")]
    Nondeterministic { operator: String },
    #[error("target record is not produced by the operator on the given input")]
    NotProduced,
    #[error("no MISet of size <= {bound} exists although the record is produced")]
    BoundViolated { bound: usize },
    #[error("input of size {size} exceeds the oracle limit {max}")]
    TooLarge { size: usize, max: usize },
}

impl EngineError {
    /// Errors after which partial results are still meaningful.
    pub fn is_budget_stop(&self) -> bool {
        matches!(
            self,
            EngineError::BudgetExhausted { .. } | EngineError::Cancelled
        )
    }
}
