//! Whole-matrix checks and metric runs used by the `oracle` and `bench`
//! commands.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::engine::{IdSet, Provenance, ProvenanceQuery};
use crate::error::EngineError;
use crate::model::{ExecutionBudget, Executor, Record, RecordSet};

use super::matrix::instance_matrix;
use super::metrics::{compute_metrics, MetricError, MetricReport};
use super::ops::SyntheticOpSpec;
use super::oracle::{
    brute_force_pall, oracle_impact, oracle_intersection, oracle_union, DEFAULT_MAX_N,
};

#[derive(Debug, Clone, Serialize)]
pub struct InstanceCheck {
    pub name: String,
    pub n: usize,
    pub misets: usize,
    pub executions: u64,
    /// What differed, when something did.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mismatch: Option<String>,
}

fn sorted(v: &[IdSet]) -> Vec<IdSet> {
    let mut v = v.to_vec();
    v.sort();
    v
}

/// Engine against exhaustive ground truth on every matrix instance.
pub fn check_matrix() -> Result<Vec<InstanceCheck>, EngineError> {
    let mut out = Vec::new();
    for inst in instance_matrix() {
        let op = inst.spec.build(&inst.name);
        let truth = brute_force_pall(&op, &inst.input, &inst.target, DEFAULT_MAX_N)?;
        let exec = Executor::new();
        let q = ProvenanceQuery::new(&exec, &op, &inst.input, &inst.target);
        let mut b = ExecutionBudget::unlimited();
        let found = sorted(&q.enumerate_misets(None, &mut b)?.id_sets());
        let mut problems = Vec::new();
        if found != truth {
            problems.push(format!("P_all {found:?} != {truth:?}"));
        }
        match q.compute_p_int(&mut b)?.provenance {
            Provenance::Int { records, .. } if records == oracle_intersection(&truth) => {}
            other => problems.push(format!("P_int {other:?}")),
        }
        match q.compute_p_uni(&mut b)?.provenance {
            Provenance::Uni { records, .. } if records == oracle_union(&truth) => {}
            other => problems.push(format!("P_uni {other:?}")),
        }
        match q.compute_p_imp(&mut b)?.provenance {
            Provenance::Imp { counts, .. }
                if counts
                    .iter()
                    .map(|e| (e.record.clone(), e.count))
                    .collect::<Vec<_>>()
                    == oracle_impact(&truth) => {}
            other => problems.push(format!("P_imp {other:?}")),
        }
        out.push(InstanceCheck {
            n: inst.input.len(),
            misets: truth.len(),
            executions: b.executions,
            mismatch: (!problems.is_empty()).then(|| problems.join("; ")),
            name: inst.name,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyRow {
    pub t: usize,
    pub n: usize,
    pub metrics: MetricReport,
    pub executions: u64,
    #[serde(serialize_with = "as_millis")]
    pub elapsed: Duration,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1000.0)
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A threshold `t` over `n` identical supporters: the single output and the
/// input it came from.
pub fn threshold_instance(t: usize, n: usize) -> (SyntheticOpSpec, RecordSet, Record) {
    let spec = SyntheticOpSpec::SupportThreshold { t, key: None };
    let input: RecordSet = (0..n)
        .map(|i| Record::text(0, format!("s{i:02}"), "s"))
        .collect();
    let target = spec
        .eval(std::slice::from_ref(&input))
        .iter()
        .next()
        .cloned()
        .expect("threshold met");
    (spec, input, target)
}

/// Metrics over the threshold family, `n = t + 2`, MISets in discovery
/// order.
pub fn threshold_family(
    ts: impl IntoIterator<Item = usize>,
    any_ks: &[usize],
) -> Result<Vec<FamilyRow>, BenchError> {
    let mut rows = Vec::new();
    for t in ts {
        let n = t + 2;
        let (spec, input, target) = threshold_instance(t, n);
        let op = spec.build(&format!("threshold{t}"));
        let exec = Executor::new();
        let mut b = ExecutionBudget::unlimited();
        let start = Instant::now();
        let pall = ProvenanceQuery::new(&exec, &op, &input, &target)
            .enumerate_misets(None, &mut b)?
            .id_sets();
        rows.push(FamilyRow {
            t,
            n,
            metrics: compute_metrics(&pall, any_ks)?,
            executions: b.executions,
            elapsed: start.elapsed(),
        });
    }
    Ok(rows)
}
