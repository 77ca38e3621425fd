//! MISets of bounded size.

use super::enumerate::{EnumerationEnd, EnumerationRun};
use super::result::IdSet;
use super::result::{Provenance, ProvenanceResult};
use super::{MiSet, ProvenanceQuery};
use crate::error::EngineError;
use crate::model::{ExecutionBudget, RecordId};

impl<'a> ProvenanceQuery<'a> {
    /// All MISets with at most `bound` records, smallest first and then in
    /// lexicographic id order. Candidates containing a MISet already found are
    /// skipped; the rest are validated with [`ProvenanceQuery::is_miset`].
    ///
    /// Fails with `BoundViolated` when the target is produced but no MISet
    /// fits the bound.
    pub fn enumerate_bounded(
        &self,
        bound: usize,
        budget: &mut ExecutionBudget,
    ) -> Result<EnumerationRun, EngineError> {
        self.check_produced(budget)?;
        let ids: Vec<RecordId> = self.input.ids().cloned().collect();
        let mut found: Vec<MiSet> = Vec::new();
        let mut found_ids: Vec<IdSet> = Vec::new();
        let limit = bound.min(ids.len());

        let mut end = EnumerationEnd::Exhausted;
        'sizes: for size in 0..=limit {
            let mut combo: Vec<usize> = (0..size).collect();
            loop {
                let cand: IdSet = combo.iter().map(|&i| ids[i].clone()).collect();
                if !found_ids.iter().any(|f| f.is_subset(&cand)) {
                    let subset = self.input.restrict(cand.iter());
                    match self.is_miset(&subset, budget) {
                        Ok(true) => {
                            found_ids.push(cand);
                            found.push(MiSet::new(subset));
                        }
                        Ok(false) => {}
                        Err(e) if e.is_budget_stop() => {
                            end = if matches!(e, EngineError::Cancelled) {
                                EnumerationEnd::Cancelled
                            } else {
                                EnumerationEnd::BudgetExhausted
                            };
                            break 'sizes;
                        }
                        Err(e) => return Err(e),
                    }
                }
                if !next_combination(&mut combo, ids.len()) {
                    break;
                }
            }
        }
        if found.is_empty() && end == EnumerationEnd::Exhausted {
            return Err(EngineError::BoundViolated { bound });
        }
        Ok(EnumerationRun { misets: found, end })
    }

    /// Bounded search packaged as an all-provenance result.
    pub fn compute_p_all_bounded(
        &self,
        bound: usize,
        budget: &mut ExecutionBudget,
    ) -> Result<ProvenanceResult, EngineError> {
        let start = budget.snapshot();
        let run = self.enumerate_bounded(bound, budget)?;
        Ok(ProvenanceResult::new(
            Provenance::All {
                misets: run.id_sets(),
                exhausted: run.end == EnumerationEnd::Exhausted,
            },
            budget.since(&start),
            run.end.is_truncated(),
        ))
    }
}

/// Advances `combo` to the next k-combination of `0..n` in lex order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::super::test_ops::*;
    use super::*;
    use crate::model::Executor;

    #[test]
    fn combinations_in_lex_order() {
        let mut c = vec![0, 1];
        let mut seen = vec![c.clone()];
        while next_combination(&mut c, 4) {
            seen.push(c.clone());
        }
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[1], vec![0, 2]);
        assert_eq!(seen[5], vec![2, 3]);
    }

    #[test]
    fn bound_too_small() {
        let exec = Executor::new();
        let op = threshold(2);
        let input = supporters(&["a", "b", "c"]);
        let t = target();
        let q = ProvenanceQuery::new(&exec, &op, &input, &t);
        let err = q
            .enumerate_bounded(1, &mut ExecutionBudget::unlimited())
            .unwrap_err();
        assert_eq!(err, EngineError::BoundViolated { bound: 1 });
    }

    #[test]
    fn bound_matches_full_enumeration() {
        let exec = Executor::new();
        let op = threshold(2);
        let input = supporters(&["a", "b", "c", "d"]);
        let t = target();
        let q = ProvenanceQuery::new(&exec, &op, &input, &t);
        let run = q
            .enumerate_bounded(2, &mut ExecutionBudget::unlimited())
            .unwrap();
        assert_eq!(run.end, EnumerationEnd::Exhausted);
        let full = q
            .enumerate_misets(None, &mut ExecutionBudget::unlimited())
            .unwrap();
        let mut expected = full.id_sets();
        expected.sort();
        assert_eq!(run.id_sets(), expected);
    }

    #[test]
    fn bounded_respects_budget() {
        let exec = Executor::new();
        let op = threshold(2);
        let input = supporters(&["a", "b", "c", "d", "e"]);
        let t = target();
        let q = ProvenanceQuery::new(&exec, &op, &input, &t);
        let mut b = ExecutionBudget::with_limit(8);
        let run = q.enumerate_bounded(3, &mut b).unwrap();
        assert_eq!(run.end, EnumerationEnd::BudgetExhausted);
        assert!(b.executions <= 8);
    }
}
