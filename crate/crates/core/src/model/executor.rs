//! Counted, memoized operator application.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use sha2::{Digest as _, Sha256};

use super::budget::ExecutionBudget;
use super::operator::{OperatorError, OperatorHandle};
use super::record::{unflatten_ports, Digest, Record, RecordSet};
use crate::error::EngineError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemoKey {
    pub operator: String,
    pub input: Digest,
}

impl MemoKey {
    pub fn new(operator: &str, inputs: &[RecordSet]) -> Self {
        let mut h = Sha256::new();
        h.update((inputs.len() as u64).to_be_bytes());
        for set in inputs {
            h.update(set.content_digest().0);
        }
        MemoKey {
            operator: operator.to_string(),
            input: Digest(h.finalize().into()),
        }
    }
}

/// How a re-execution's output is searched for the target record.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// Any output with the same canonical value.
    #[default]
    Value,
    /// The output with the target's id, and only if its value is equal too.
    /// Used for intermediate records of operators with stable ids.
    Record,
}

impl Matching {
    pub fn contains(self, set: &RecordSet, target: &Record) -> bool {
        match self {
            Matching::Value => set.contains_by_value(target),
            Matching::Record => set.get(&target.id).is_some_and(|r| r.value_eq(target)),
        }
    }
}

/// Shared memoization table: concurrent readers, serialized writers.
#[derive(Default)]
pub struct MemoCache {
    entries: RwLock<HashMap<MemoKey, Arc<RecordSet>>>,
}

impl MemoCache {
    pub fn get(&self, key: &MemoKey) -> Option<Arc<RecordSet>> {
        self.entries.read().expect("memo lock").get(key).cloned()
    }

    pub fn put(&self, key: MemoKey, value: Arc<RecordSet>) {
        self.entries.write().expect("memo lock").insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("memo lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.entries.write().expect("memo lock").clear();
    }
}

/// Applies operators on behalf of queries: checks budgets, consults the memo
/// cache, counts true executions and optionally re-runs every n-th call to
/// catch nondeterministic operators.
pub struct Executor {
    cache: Option<Arc<MemoCache>>,
    watchdog_every: Option<u64>,
    real_executions: AtomicU64,
    virtual_evaluations: AtomicU64,
}

impl Default for Executor {
    fn default() -> Self {
        Executor::new()
    }
}

impl Executor {
    pub fn new() -> Self {
        Executor {
            cache: Some(Arc::new(MemoCache::default())),
            watchdog_every: None,
            real_executions: AtomicU64::new(0),
            virtual_evaluations: AtomicU64::new(0),
        }
    }

    pub fn with_cache(cache: Arc<MemoCache>) -> Self {
        Executor {
            cache: Some(cache),
            ..Executor::new()
        }
    }

    /// Every request is a true execution.
    pub fn uncached() -> Self {
        Executor {
            cache: None,
            ..Executor::new()
        }
    }

    /// Re-execute every `every`-th true execution and compare outputs. The
    /// verification run is not charged to the query budget.
    pub fn with_watchdog(mut self, every: u64) -> Self {
        self.watchdog_every = Some(every.max(1));
        self
    }

    pub fn cache(&self) -> Option<&Arc<MemoCache>> {
        self.cache.as_ref()
    }

    /// True executions of real operators across all queries.
    pub fn real_executions(&self) -> u64 {
        self.real_executions.load(Ordering::SeqCst)
    }

    pub fn virtual_evaluations(&self) -> u64 {
        self.virtual_evaluations.load(Ordering::SeqCst)
    }

    pub fn apply_counted(
        &self,
        op: &OperatorHandle,
        inputs: &[RecordSet],
        budget: &mut ExecutionBudget,
    ) -> Result<Arc<RecordSet>, EngineError> {
        if inputs.len() != op.arity {
            return Err(EngineError::OperatorFailure {
                operator: op.name.clone(),
                source: OperatorError::Arity {
                    expected: op.arity,
                    got: inputs.len(),
                },
            });
        }
        if budget.is_cancelled() {
            return Err(EngineError::Cancelled);
        }
        let key = self.cache.as_ref().map(|_| MemoKey::new(&op.name, inputs));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.get(key) {
                budget.cached_hits += 1;
                return Ok(hit);
            }
        }
        if let Some(limit) = budget.limit {
            if budget.charged() >= limit {
                return Err(EngineError::BudgetExhausted {
                    executions: budget.charged(),
                    limit,
                });
            }
        }

        let fail = |source| EngineError::OperatorFailure {
            operator: op.name.clone(),
            source,
        };
        let output = op.apply_raw(inputs).map_err(fail)?;
        let n = if op.is_virtual() {
            budget.virtual_evaluations += 1;
            self.virtual_evaluations.fetch_add(1, Ordering::SeqCst) + 1
        } else {
            budget.executions += 1;
            self.real_executions.fetch_add(1, Ordering::SeqCst) + 1
        };
        budget.records_fetched += inputs.iter().map(|s| s.len() as u64).sum::<u64>();

        if let Some(every) = self.watchdog_every {
            if n % every == 0 {
                let again = op.apply_raw(inputs).map_err(fail)?;
                if !again.value_eq(&output) {
                    return Err(EngineError::Nondeterministic {
                        operator: op.name.clone(),
                    });
                }
            }
        }

        let output = Arc::new(output);
        if let (Some(cache), Some(key)) = (&self.cache, key) {
            cache.put(key, output.clone());
        }
        Ok(output)
    }

    /// Applies `op` to a port-tagged flattened input.
    pub fn apply_flat(
        &self,
        op: &OperatorHandle,
        flat: &RecordSet,
        budget: &mut ExecutionBudget,
    ) -> Result<Arc<RecordSet>, EngineError> {
        let inputs = unflatten_ports(flat, op.arity);
        self.apply_counted(op, &inputs, budget)
    }

    /// `target ∈ O(subset)` by value.
    pub fn produces(
        &self,
        op: &OperatorHandle,
        subset: &RecordSet,
        target: &Record,
        budget: &mut ExecutionBudget,
    ) -> Result<bool, EngineError> {
        self.produces_matching(op, subset, target, Matching::Value, budget)
    }

    pub fn produces_matching(
        &self,
        op: &OperatorHandle,
        subset: &RecordSet,
        target: &Record,
        matching: Matching,
        budget: &mut ExecutionBudget,
    ) -> Result<bool, EngineError> {
        Ok(matching.contains(&*self.apply_flat(op, subset, budget)?, target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::record::Record;

    fn identity() -> OperatorHandle {
        OperatorHandle::from_fn("identity", 1, |i: &[RecordSet]| Ok(i[0].clone()))
    }

    fn single(id: &str) -> RecordSet {
        [Record::text(0, id, id)].into_iter().collect()
    }

    #[test]
    fn identity_is_counted_once_then_memoized() {
        let exec = Executor::new();
        let op = identity();
        let mut b = ExecutionBudget::unlimited();
        let out = exec.apply_counted(&op, &[single("a")], &mut b).unwrap();
        assert!(out.contains_by_value(&Record::text(0, "x", "a")));
        assert_eq!((b.executions, b.cached_hits, b.records_fetched), (1, 0, 1));
        let out = exec.apply_counted(&op, &[single("a")], &mut b).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((b.executions, b.cached_hits), (1, 1));
        assert_eq!(b.total_requests(), 2);
        assert_eq!(exec.real_executions(), 1);
    }

    #[test]
    fn uncached_counts_every_request() {
        let exec = Executor::uncached();
        let op = identity();
        let mut b = ExecutionBudget::unlimited();
        for _ in 0..3 {
            exec.apply_counted(&op, &[single("a")], &mut b).unwrap();
        }
        assert_eq!(b.executions, 3);
    }

    #[test]
    fn limit_stops_before_the_extra_execution() {
        let exec = Executor::new();
        let op = identity();
        let mut b = ExecutionBudget::with_limit(2);
        exec.apply_counted(&op, &[single("a")], &mut b).unwrap();
        exec.apply_counted(&op, &[single("b")], &mut b).unwrap();
        // cache hits remain free
        exec.apply_counted(&op, &[single("a")], &mut b).unwrap();
        let err = exec.apply_counted(&op, &[single("c")], &mut b).unwrap_err();
        assert!(matches!(err, EngineError::BudgetExhausted { limit: 2, .. }));
        assert_eq!(b.executions, 2);
        assert_eq!(exec.real_executions(), 2);
    }

    #[test]
    fn watchdog_flags_nondeterminism() {
        use std::sync::atomic::AtomicUsize;
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let op = OperatorHandle::from_fn("flaky", 1, move |_: &[RecordSet]| {
            let n = c.fetch_add(1, Ordering::SeqCst);
            Ok([Record::text(0, "o", format!("v{n}"))]
                .into_iter()
                .collect())
        });
        let exec = Executor::uncached().with_watchdog(1);
        let mut b = ExecutionBudget::unlimited();
        let err = exec.apply_counted(&op, &[single("a")], &mut b).unwrap_err();
        assert!(matches!(err, EngineError::Nondeterministic { .. }));
    }

    #[test]
    fn cancelled_budget_refuses_to_run() {
        let exec = Executor::new();
        let token = crate::model::CancelToken::new();
        token.cancel();
        let mut b = ExecutionBudget::unlimited().with_cancel(token);
        let err = exec
            .apply_counted(&identity(), &[single("a")], &mut b)
            .unwrap_err();
        assert_eq!(err, EngineError::Cancelled);
        assert_eq!(b.executions, 0);
    }
}
