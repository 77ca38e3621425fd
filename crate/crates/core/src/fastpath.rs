//! Shortcuts when an operator's shape or spec level makes the general search
//! unnecessary.

use serde::{Deserialize, Serialize};

use crate::engine::{IdSet, MiSet, Provenance, ProvenanceKind, ProvenanceQuery, ProvenanceResult};
use crate::error::EngineError;
use crate::model::{
    ExecutionBudget, Executor, OperatorHandle, Record, RecordId, RecordSet, SpecLevel,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FastPathError {
    #[error(
        "operator `{operator}` is not record-wise for this output: no single input produces it"
    )]
    ShapeViolation { operator: String },
    #[error("the output has more than one MISet")]
    NotUnique,
    #[error("no witness for output `{output}`: {reason}")]
    MissingWitness { output: String, reason: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessSource {
    IoSpec,
    IntegrityConstraint,
}

/// Inputs known to produce an output, not necessarily minimal.
#[derive(Debug, Clone)]
pub struct WitnessSet {
    pub members: RecordSet,
    pub source: WitnessSource,
    pub minimal: bool,
}

/// Linear provenance for one-to-one and one-to-many operators: every MISet
/// is a singleton, so testing each `{i}` finds all of them in `N` executions.
pub fn provenance_direct_scan(
    exec: &Executor,
    op: &OperatorHandle,
    input: &RecordSet,
    target: &Record,
    kind: ProvenanceKind,
    k: Option<usize>,
    budget: &mut ExecutionBudget,
) -> Result<ProvenanceResult, FastPathError> {
    let start = budget.snapshot();
    let misets = direct_scan(&ProvenanceQuery::new(exec, op, input, target), budget)?;
    Ok(ProvenanceResult::new(
        Provenance::from_misets(kind, &misets, k, true),
        budget.since(&start),
        false,
    ))
}

/// The singleton MISets of `q.target`, found by applying the operator to each
/// input record alone. `ShapeViolation` when none produces it.
pub fn direct_scan(
    q: &ProvenanceQuery,
    budget: &mut ExecutionBudget,
) -> Result<Vec<IdSet>, FastPathError> {
    let mut misets: Vec<IdSet> = Vec::new();
    for rec in q.input.iter_arc() {
        let single: RecordSet = [rec.clone()].into_iter().collect();
        if q.produces(&single, budget)? {
            misets.push([rec.id.clone()].into_iter().collect());
        }
    }
    if misets.is_empty() {
        return Err(FastPathError::ShapeViolation {
            operator: q.op.name.clone(),
        });
    }
    Ok(misets)
}

/// Collapses every provenance kind onto the single MISet when there is only
/// one; otherwise `NotUnique`.
pub fn provenance_unique(
    exec: &Executor,
    op: &OperatorHandle,
    input: &RecordSet,
    target: &Record,
    kind: ProvenanceKind,
    k: Option<usize>,
    budget: &mut ExecutionBudget,
) -> Result<ProvenanceResult, FastPathError> {
    let start = budget.snapshot();
    let q = ProvenanceQuery::new(exec, op, input, target);
    let (unique, miset) = q.is_unique_miset(budget)?;
    if !unique {
        return Err(FastPathError::NotUnique);
    }
    Ok(ProvenanceResult::new(
        Provenance::from_misets(kind, &[miset.ids()], k, true),
        budget.since(&start),
        false,
    ))
}

/// Witness ids in tables are written `port:local`, or just `local` for port 0.
fn parse_witness_id(raw: &str) -> RecordId {
    raw.parse().unwrap_or_else(|_| RecordId::new(0, raw))
}

/// Reads the witness for `output` from the operator's spec: a table lookup
/// for IO specs, rule evaluation over `input` for key constraints.
pub fn witness_from_spec(
    op: &OperatorHandle,
    input: &RecordSet,
    output: &Record,
) -> Result<WitnessSet, FastPathError> {
    let missing = |reason: String| FastPathError::MissingWitness {
        output: output.id.to_string(),
        reason,
    };
    match &op.spec_level {
        SpecLevel::BlackBox => Err(missing("operator is a black box".into())),
        SpecLevel::Exact { table, .. } | SpecLevel::IoSpec { table } => {
            let row = table
                .entries
                .get(&output.id.local)
                .or_else(|| table.entries.get(&output.id.to_string()))
                .ok_or_else(|| missing("not in the witness table".into()))?;
            let mut members = RecordSet::new();
            for raw in row {
                let id = parse_witness_id(raw);
                let rec = input.get(&id).ok_or_else(|| {
                    missing(format!("witness `{raw}` is not in the recorded input"))
                })?;
                members.insert(rec.clone());
            }
            if members.is_empty() {
                return Err(missing("empty witness row".into()));
            }
            Ok(WitnessSet {
                members,
                source: WitnessSource::IoSpec,
                minimal: false,
            })
        }
        SpecLevel::IntegrityConstraint { rules } => {
            let mut members = RecordSet::new();
            for rule in rules {
                let Some(key) = output.value.field(&rule.output_field) else {
                    continue;
                };
                let key = key.render();
                for rec in input.iter() {
                    let matches = if rule.input_field == "id" {
                        rec.id.local == key
                    } else {
                        rec.value
                            .field(&rule.input_field)
                            .is_some_and(|v| v.render() == key)
                    };
                    if matches {
                        members.insert(rec.clone());
                    }
                }
            }
            if members.is_empty() {
                return Err(missing("no input matches the key rules".into()));
            }
            Ok(WitnessSet {
                members,
                source: WitnessSource::IntegrityConstraint,
                minimal: false,
            })
        }
    }
}

/// One execution confirming that the witness really produces `target`.
pub fn verify_witness(
    exec: &Executor,
    op: &OperatorHandle,
    witness: &WitnessSet,
    target: &Record,
    budget: &mut ExecutionBudget,
) -> Result<bool, EngineError> {
    exec.produces(op, &witness.members, target, budget)
}

/// Greedy shrinking seeded with the witness instead of the whole input.
pub fn minimize_witness(
    exec: &Executor,
    op: &OperatorHandle,
    witness: &WitnessSet,
    target: &Record,
    budget: &mut ExecutionBudget,
) -> Result<MiSet, EngineError> {
    ProvenanceQuery::new(exec, op, &witness.members, target).find_any_miset(budget)
}
