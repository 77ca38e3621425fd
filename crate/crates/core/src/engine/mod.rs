//! MISet search over arbitrary monotonic black-box operators.
//!
//! Every loop visits records in ascending `(port, local)` order, so all
//! results are reproducible. Operator applications go through the
//! [`Executor`], which does the counting and memoization.

mod bounded;
mod enumerate;
mod result;

pub use enumerate::{EnumerationEnd, EnumerationRun, MiSetEnumerator, Step};
pub use result::{
    impact_of, intersection_of, minimal_sets, union_of, IdSet, ImpactEntry, MiSet, Provenance,
    ProvenanceKind, ProvenanceResult,
};

use crate::error::EngineError;
use crate::model::{ExecutionBudget, Executor, Matching, OperatorHandle, Record, RecordSet};

/// One provenance question: which subsets of `input` make `op` produce
/// `target`? `input` is the port-tagged flattened input of `op`.
#[derive(Clone, Copy)]
pub struct ProvenanceQuery<'a> {
    pub exec: &'a Executor,
    pub op: &'a OperatorHandle,
    pub input: &'a RecordSet,
    pub target: &'a Record,
    pub matching: Matching,
}

impl<'a> ProvenanceQuery<'a> {
    pub fn new(
        exec: &'a Executor,
        op: &'a OperatorHandle,
        input: &'a RecordSet,
        target: &'a Record,
    ) -> Self {
        ProvenanceQuery {
            exec,
            op,
            input,
            target,
            matching: Matching::Value,
        }
    }

    pub fn with_matching(mut self, matching: Matching) -> Self {
        self.matching = matching;
        self
    }

    /// `target ∈ O(subset)`, by value unless record matching was requested.
    pub fn produces(
        &self,
        subset: &RecordSet,
        budget: &mut ExecutionBudget,
    ) -> Result<bool, EngineError> {
        self.exec
            .produces_matching(self.op, subset, self.target, self.matching, budget)
    }

    /// Fails with `NotProduced` unless `target ∈ O(input)`.
    pub fn check_produced(&self, budget: &mut ExecutionBudget) -> Result<(), EngineError> {
        if self.produces(self.input, budget)? {
            Ok(())
        } else {
            Err(EngineError::NotProduced)
        }
    }

    /// Greedy shrinking of a producing set: walk a frozen snapshot of
    /// `start` and drop each record whose removal keeps the target.
    /// `start` must produce the target. Costs at most `|start|` executions.
    pub(crate) fn shrink(
        &self,
        start: &RecordSet,
        budget: &mut ExecutionBudget,
    ) -> Result<MiSet, EngineError> {
        let mut current = start.clone();
        for id in start.ids() {
            let candidate = current.without(id);
            if self.produces(&candidate, budget)? {
                current = candidate;
            }
        }
        Ok(MiSet::new(current))
    }

    /// A single MISet of the target, in at most `N + 1` executions.
    pub fn find_any_miset(&self, budget: &mut ExecutionBudget) -> Result<MiSet, EngineError> {
        self.check_produced(budget)?;
        self.shrink(self.input, budget)
    }

    /// Whether the target has exactly one MISet, plus the MISet found. Any
    /// other MISet must miss some member `m` of the found one and would
    /// therefore survive in `O(I - {m})`.
    pub fn is_unique_miset(
        &self,
        budget: &mut ExecutionBudget,
    ) -> Result<(bool, MiSet), EngineError> {
        let found = self.find_any_miset(budget)?;
        let mut unique = true;
        for id in found.members().ids() {
            if self.produces(&self.input.without(id), budget)? {
                unique = false;
                break;
            }
        }
        Ok((unique, found))
    }

    /// `target ∈ O(S)` and no single-record removal from `S` keeps it.
    pub fn is_miset(
        &self,
        subset: &RecordSet,
        budget: &mut ExecutionBudget,
    ) -> Result<bool, EngineError> {
        if !self.produces(subset, budget)? {
            return Ok(false);
        }
        for id in subset.ids() {
            if self.produces(&subset.without(id), budget)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Dispatches on `kind`; `k` only matters for `Any`.
    pub fn compute(
        &self,
        kind: ProvenanceKind,
        k: Option<usize>,
        budget: &mut ExecutionBudget,
    ) -> Result<ProvenanceResult, EngineError> {
        match kind {
            ProvenanceKind::All => self.compute_p_all(budget),
            ProvenanceKind::Any => self.compute_p_any(k, budget),
            ProvenanceKind::Uni => self.compute_p_uni(budget),
            ProvenanceKind::Int => self.compute_p_int(budget),
            ProvenanceKind::Imp => self.compute_p_imp(budget),
        }
    }

    /// Records whose individual removal loses the target: the intersection
    /// of all MISets, in `N + 1` executions.
    pub fn compute_p_int(
        &self,
        budget: &mut ExecutionBudget,
    ) -> Result<ProvenanceResult, EngineError> {
        let start = budget.snapshot();
        self.check_produced(budget)?;
        let mut essential = IdSet::new();
        for id in self.input.ids() {
            if !self.produces(&self.input.without(id), budget)? {
                essential.insert(id.clone());
            }
        }
        Ok(ProvenanceResult::new(
            Provenance::Int {
                records: essential,
                exact: true,
            },
            budget.since(&start),
            false,
        ))
    }

    /// Union of all MISets. Exact only when enumeration ran to exhaustion.
    pub fn compute_p_uni(
        &self,
        budget: &mut ExecutionBudget,
    ) -> Result<ProvenanceResult, EngineError> {
        let start = budget.snapshot();
        let run = self.enumerate_misets(None, budget)?;
        let misets = run.id_sets();
        Ok(ProvenanceResult::new(
            Provenance::Uni {
                records: union_of(&misets),
                exact: run.end == EnumerationEnd::Exhausted,
            },
            budget.since(&start),
            run.end.is_truncated(),
        ))
    }

    /// Per-record MISet membership counts over the enumerated MISets.
    pub fn compute_p_imp(
        &self,
        budget: &mut ExecutionBudget,
    ) -> Result<ProvenanceResult, EngineError> {
        let start = budget.snapshot();
        let run = self.enumerate_misets(None, budget)?;
        let misets = run.id_sets();
        Ok(ProvenanceResult::new(
            Provenance::Imp {
                counts: impact_of(&misets),
                exact: run.end == EnumerationEnd::Exhausted,
            },
            budget.since(&start),
            run.end.is_truncated(),
        ))
    }

    /// All MISets by repeated search (unbounded) as a provenance result.
    pub fn compute_p_all(
        &self,
        budget: &mut ExecutionBudget,
    ) -> Result<ProvenanceResult, EngineError> {
        let start = budget.snapshot();
        let run = self.enumerate_misets(None, budget)?;
        Ok(ProvenanceResult::new(
            Provenance::All {
                misets: run.id_sets(),
                exhausted: run.end == EnumerationEnd::Exhausted,
            },
            budget.since(&start),
            run.end.is_truncated(),
        ))
    }

    /// Up to `k` MISets (all of them when `k` is `None`).
    pub fn compute_p_any(
        &self,
        k: Option<usize>,
        budget: &mut ExecutionBudget,
    ) -> Result<ProvenanceResult, EngineError> {
        let start = budget.snapshot();
        let run = self.enumerate_misets(k, budget)?;
        Ok(ProvenanceResult::new(
            Provenance::Any {
                misets: run.id_sets(),
                requested_k: k,
                exhausted: run.end == EnumerationEnd::Exhausted,
            },
            budget.since(&start),
            run.end.is_truncated(),
        ))
    }
}
