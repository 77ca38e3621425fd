//! Enumeration of all MISets by repeated search.
//!
//! Given the MISets found so far, a new one lies inside `I - R` for some set
//! `R` that takes at least one record from each known MISet. The search walks
//! those removal sets depth-first, skipping known MISets that `R` already
//! hits, so only (near-)minimal removal sets are ever executed. Removal sets
//! that fail are remembered: by monotonicity every superset fails too.

use std::collections::HashSet;

use super::result::IdSet;
use super::{MiSet, ProvenanceQuery};
use crate::error::EngineError;
use crate::model::{ExecutionBudget, RecordId};

/// Why an enumeration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnumerationEnd {
    /// Every MISet was found.
    Exhausted,
    /// The caller's `k` was reached.
    Limit,
    BudgetExhausted,
    Cancelled,
}

impl EnumerationEnd {
    pub fn is_truncated(self) -> bool {
        matches!(
            self,
            EnumerationEnd::BudgetExhausted | EnumerationEnd::Cancelled
        )
    }

    fn from_stop(e: &EngineError) -> Self {
        match e {
            EngineError::Cancelled => EnumerationEnd::Cancelled,
            _ => EnumerationEnd::BudgetExhausted,
        }
    }
}

/// One step of a streamed enumeration.
#[derive(Debug, Clone)]
pub enum Step {
    Found(MiSet),
    End(EnumerationEnd),
}

/// Everything an enumeration produced.
#[derive(Debug, Clone)]
pub struct EnumerationRun {
    pub misets: Vec<MiSet>,
    pub end: EnumerationEnd,
}

impl EnumerationRun {
    /// Member ids of each MISet, in discovery order.
    pub fn id_sets(&self) -> Vec<IdSet> {
        self.misets.iter().map(MiSet::ids).collect()
    }
}

/// Stateful enumerator yielding one MISet per call.
pub struct MiSetEnumerator<'a> {
    query: ProvenanceQuery<'a>,
    found: Vec<MiSet>,
    found_ids: Vec<IdSet>,
    dead: Vec<IdSet>,
    finished: bool,
}

impl<'a> MiSetEnumerator<'a> {
    pub fn new(query: ProvenanceQuery<'a>) -> Self {
        MiSetEnumerator {
            query,
            found: Vec::new(),
            found_ids: Vec::new(),
            dead: Vec::new(),
            finished: false,
        }
    }

    pub fn found(&self) -> &[MiSet] {
        &self.found
    }

    /// Next MISet, or `None` once all have been found. Budget stops are
    /// returned as errors; the enumerator can be resumed with more budget.
    pub fn next_miset(
        &mut self,
        budget: &mut ExecutionBudget,
    ) -> Result<Option<MiSet>, EngineError> {
        if self.finished {
            return Ok(None);
        }
        let next = if self.found.is_empty() {
            Some(self.query.find_any_miset(budget)?)
        } else {
            self.search(budget)?
        };
        match next {
            Some(m) => {
                self.found_ids.push(m.ids());
                self.found.push(m.clone());
                Ok(Some(m))
            }
            None => {
                self.finished = true;
                Ok(None)
            }
        }
    }

    fn search(&mut self, budget: &mut ExecutionBudget) -> Result<Option<MiSet>, EngineError> {
        let mut visited = HashSet::new();
        let mut removed = IdSet::new();
        self.descend(0, &mut removed, &mut visited, budget)
    }

    fn descend(
        &mut self,
        depth: usize,
        removed: &mut IdSet,
        visited: &mut HashSet<(usize, IdSet)>,
        budget: &mut ExecutionBudget,
    ) -> Result<Option<MiSet>, EngineError> {
        if self.dead.iter().any(|d| d.is_subset(removed)) {
            return Ok(None);
        }
        // first known MISet not yet hit by `removed`
        let Some(j) =
            (depth..self.found_ids.len()).find(|&j| self.found_ids[j].is_disjoint(removed))
        else {
            let rest = self.query.input.without_all(removed.iter());
            if self.query.produces(&rest, budget)? {
                return Ok(Some(self.query.shrink(&rest, budget)?));
            }
            self.dead.push(removed.clone());
            return Ok(None);
        };
        if !visited.insert((j, removed.clone())) {
            return Ok(None);
        }
        let choices: Vec<RecordId> = self.found_ids[j].iter().cloned().collect();
        for m in choices {
            removed.insert(m.clone());
            let hit = self.descend(j + 1, removed, visited, budget);
            removed.remove(&m);
            if let Some(found) = hit? {
                return Ok(Some(found));
            }
        }
        Ok(None)
    }
}

impl<'a> ProvenanceQuery<'a> {
    /// Streams MISets to `on_step`, stopping after `k` of them, at the end of
    /// the search or when the budget runs out. `on_step` returning `false`
    /// stops early as if cancelled. Errors other than budget stops abort.
    pub fn enumerate_each(
        &self,
        k: Option<usize>,
        budget: &mut ExecutionBudget,
        mut on_step: impl FnMut(Step) -> bool,
    ) -> Result<EnumerationEnd, EngineError> {
        let mut en = MiSetEnumerator::new(*self);
        let end = loop {
            if k.is_some_and(|k| en.found().len() >= k) {
                break EnumerationEnd::Limit;
            }
            match en.next_miset(budget) {
                Ok(Some(m)) => {
                    if !on_step(Step::Found(m)) {
                        break EnumerationEnd::Cancelled;
                    }
                }
                Ok(None) => break EnumerationEnd::Exhausted,
                Err(e) if e.is_budget_stop() => break EnumerationEnd::from_stop(&e),
                Err(e) => return Err(e),
            }
        };
        on_step(Step::End(end));
        Ok(end)
    }

    /// Collects up to `k` MISets (all when `None`).
    pub fn enumerate_misets(
        &self,
        k: Option<usize>,
        budget: &mut ExecutionBudget,
    ) -> Result<EnumerationRun, EngineError> {
        let mut misets = Vec::new();
        let end = self.enumerate_each(k, budget, |s| {
            if let Step::Found(m) = s {
                misets.push(m);
            }
            true
        })?;
        Ok(EnumerationRun { misets, end })
    }

    /// The next MISet not among `found`, or `None` when there is none.
    pub fn find_next_miset(
        &self,
        found: &[MiSet],
        budget: &mut ExecutionBudget,
    ) -> Result<Option<MiSet>, EngineError> {
        self.check_produced(budget)?;
        let mut en = MiSetEnumerator::new(*self);
        en.found = found.to_vec();
        en.found_ids = found.iter().map(MiSet::ids).collect();
        if en.found.is_empty() {
            return en.next_miset(budget);
        }
        en.search(budget)
    }
}
