use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::engine::{EnumerationEnd, IdSet, ProvenanceQuery};
use crate::error::EngineError;
use crate::fastpath::{direct_scan, FastPathError};
use crate::model::{
    ExecutionBudget, Executor, Matching, OperatorHandle, Record, RecordId, RecordSet,
};

/// All MISets of one recorded output record over its operator's input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredEntry {
    pub misets: Vec<IdSet>,
    /// False when the enumeration stopped early.
    pub exact: bool,
    /// How the record was recognised in re-executions.
    pub matching: Matching,
}

impl StoredEntry {
    /// Record matching first: intermediate records are identified by id as
    /// well as value, which is what the next operator actually receives.
    /// Operators whose ids are not reproducible fall back to value matching.
    pub fn compute(
        exec: &Executor,
        op: &OperatorHandle,
        input: &RecordSet,
        record: &Record,
        budget: &mut ExecutionBudget,
    ) -> Result<StoredEntry, EngineError> {
        for matching in [Matching::Record, Matching::Value] {
            let q = ProvenanceQuery::new(exec, op, input, record).with_matching(matching);
            if op.properties.fast_path_eligible() {
                match direct_scan(&q, budget) {
                    Ok(misets) => {
                        return Ok(StoredEntry {
                            misets,
                            exact: true,
                            matching,
                        })
                    }
                    Err(FastPathError::Engine(e)) => return Err(e),
                    Err(_) => {}
                }
            }
            let run = match q.enumerate_misets(None, budget) {
                Err(EngineError::NotProduced) => continue,
                other => other?,
            };
            return Ok(StoredEntry {
                misets: run.id_sets(),
                exact: run.end == EnumerationEnd::Exhausted,
                matching,
            });
        }
        Err(EngineError::NotProduced)
    }

    /// Re-checks every stored MISet against the operator.
    pub fn audit(
        &self,
        exec: &Executor,
        op: &OperatorHandle,
        input: &RecordSet,
        record: &Record,
        budget: &mut ExecutionBudget,
    ) -> Result<bool, EngineError> {
        let q = ProvenanceQuery::new(exec, op, input, record).with_matching(self.matching);
        for m in &self.misets {
            if !q.is_miset(&input.restrict(m), budget)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Per-node, per-record P_all shared by composition queries.
#[derive(Debug, Default)]
pub struct StoredProvenance {
    entries: RwLock<BTreeMap<(String, RecordId), Arc<StoredEntry>>>,
}

impl StoredProvenance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, node: &str, record: &RecordId) -> Option<Arc<StoredEntry>> {
        self.entries
            .read()
            .expect("stored provenance lock")
            .get(&(node.to_string(), record.clone()))
            .cloned()
    }

    pub fn insert(&self, node: &str, record: RecordId, entry: StoredEntry) -> Arc<StoredEntry> {
        let entry = Arc::new(entry);
        self.entries
            .write()
            .expect("stored provenance lock")
            .insert((node.to_string(), record), entry.clone());
        entry
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("stored provenance lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every entry, ordered by node then record.
    pub fn entries(&self) -> Vec<(String, RecordId, StoredEntry)> {
        self.entries
            .read()
            .expect("stored provenance lock")
            .iter()
            .map(|((n, r), e)| (n.clone(), r.clone(), (**e).clone()))
            .collect()
    }
}
