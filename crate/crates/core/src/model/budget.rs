use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Cooperative cancellation flag shared between a query and its consumer.
#[derive(Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

impl fmt::Debug for CancelToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CancelToken({})", self.is_cancelled())
    }
}

/// Per-query accounting of operator applications.
///
/// `executions` counts true (cache-miss) applications of real operators and
/// `virtual_evaluations` those of simulated composites; `limit` caps their
/// sum. A request that would exceed the cap fails before running.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExecutionBudget {
    pub executions: u64,
    pub cached_hits: u64,
    pub records_fetched: u64,
    #[serde(default)]
    pub virtual_evaluations: u64,
    pub limit: Option<u64>,
    #[serde(skip)]
    cancel: Option<CancelToken>,
}

impl PartialEq for ExecutionBudget {
    fn eq(&self, other: &Self) -> bool {
        self.executions == other.executions
            && self.cached_hits == other.cached_hits
            && self.records_fetched == other.records_fetched
            && self.virtual_evaluations == other.virtual_evaluations
            && self.limit == other.limit
    }
}

impl Eq for ExecutionBudget {}

impl ExecutionBudget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn with_limit(limit: u64) -> Self {
        ExecutionBudget {
            limit: Some(limit),
            ..Self::default()
        }
    }

    pub fn with_cancel(mut self, token: CancelToken) -> Self {
        self.cancel = Some(token);
        self
    }

    pub fn cancel_token(&self) -> Option<&CancelToken> {
        self.cancel.as_ref()
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(CancelToken::is_cancelled)
    }

    pub fn total_requests(&self) -> u64 {
        self.executions + self.virtual_evaluations + self.cached_hits
    }

    pub fn charged(&self) -> u64 {
        self.executions + self.virtual_evaluations
    }

    /// True when one more true application would exceed the cap.
    pub fn is_exhausted(&self) -> bool {
        self.limit.is_some_and(|l| self.charged() >= l)
    }

    /// Counters only, without cancellation wiring.
    pub fn snapshot(&self) -> ExecutionBudget {
        ExecutionBudget {
            cancel: None,
            ..self.clone()
        }
    }

    /// Spending of `self` since `earlier` (limit taken from `self`).
    pub fn since(&self, earlier: &ExecutionBudget) -> ExecutionBudget {
        ExecutionBudget {
            executions: self.executions - earlier.executions,
            cached_hits: self.cached_hits - earlier.cached_hits,
            records_fetched: self.records_fetched - earlier.records_fetched,
            virtual_evaluations: self.virtual_evaluations - earlier.virtual_evaluations,
            limit: self.limit,
            cancel: None,
        }
    }

    /// Adds the counters of `other` into `self`.
    pub fn absorb(&mut self, other: &ExecutionBudget) {
        self.executions += other.executions;
        self.cached_hits += other.cached_hits;
        self.records_fetched += other.records_fetched;
        self.virtual_evaluations += other.virtual_evaluations;
    }
}
