//! Coverage metrics over provenance results.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::{impact_of, intersection_of, union_of, IdSet, ImpactEntry};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("coverage is undefined: the union provenance is empty")]
    DivisionUndefined,
}

/// `|set| / |P_uni|`.
pub fn coverage(set: &IdSet, puni: &IdSet) -> Result<f64, MetricError> {
    if puni.is_empty() {
        return Err(MetricError::DivisionUndefined);
    }
    Ok(set.len() as f64 / puni.len() as f64)
}

/// Share of all record appearances in MISets covered by the top `k` of the
/// impact ranking.
pub fn record_coverage(imp: &[ImpactEntry], k: usize) -> Result<f64, MetricError> {
    let total: u64 = imp.iter().map(|e| e.count).sum();
    if total == 0 {
        return Err(MetricError::DivisionUndefined);
    }
    let top: u64 = imp.iter().take(k).map(|e| e.count).sum();
    Ok(top as f64 / total as f64)
}

/// Share of MISets that contain at least one of the top `k` impact records.
pub fn miset_coverage(pall: &[IdSet], imp: &[ImpactEntry], k: usize) -> Result<f64, MetricError> {
    if pall.is_empty() {
        return Err(MetricError::DivisionUndefined);
    }
    let top: IdSet = imp.iter().take(k).map(|e| e.record.clone()).collect();
    let hit = pall.iter().filter(|m| !m.is_disjoint(&top)).count();
    Ok(hit as f64 / pall.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    /// Keys: `int`, `uni`, `any-<k>`.
    pub coverage: BTreeMap<String, f64>,
    /// Entry `k-1` is the value at `k`, for `k` in `1..=|imp|`.
    pub record_coverage: Vec<f64>,
    pub miset_coverage: Vec<f64>,
    pub sizes: BTreeMap<String, usize>,
}

/// All metrics for one record from its complete P_all. `Any-k` takes the
/// first `k` MISets in the given order.
pub fn compute_metrics(pall: &[IdSet], any_ks: &[usize]) -> Result<MetricReport, MetricError> {
    let puni = union_of(pall);
    let pint = intersection_of(pall);
    let imp = impact_of(pall);

    let mut cov = BTreeMap::new();
    let mut sizes = BTreeMap::new();
    cov.insert("int".to_string(), coverage(&pint, &puni)?);
    cov.insert("uni".to_string(), coverage(&puni, &puni)?);
    sizes.insert("all".to_string(), pall.len());
    sizes.insert("uni".to_string(), puni.len());
    sizes.insert("int".to_string(), pint.len());
    for &k in any_ks {
        let any = union_of(&pall[..k.min(pall.len())]);
        cov.insert(format!("any-{k}"), coverage(&any, &puni)?);
        sizes.insert(format!("any-{k}"), any.len());
    }
    let mut rc = Vec::new();
    let mut mc = Vec::new();
    for k in 1..=imp.len() {
        rc.push(record_coverage(&imp, k)?);
        mc.push(miset_coverage(pall, &imp, k)?);
    }
    Ok(MetricReport {
        coverage: cov,
        record_coverage: rc,
        miset_coverage: mc,
        sizes,
    })
}
