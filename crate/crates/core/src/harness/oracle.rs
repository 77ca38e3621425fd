//! Exhaustive ground truth. Deliberately shares no code with the engine:
//! subsets are bitmasks, the operator is applied raw, and minimality is
//! checked against every proper submask.

use crate::engine::IdSet;
use crate::error::EngineError;
use crate::model::{unflatten_ports, OperatorHandle, Record, RecordId, RecordSet};

pub const DEFAULT_MAX_N: usize = 12;

/// Every MISet of `target` over `input`, sorted.
pub fn brute_force_pall(
    op: &OperatorHandle,
    input: &RecordSet,
    target: &Record,
    max_n: usize,
) -> Result<Vec<IdSet>, EngineError> {
    let n = input.len();
    if n > max_n {
        return Err(EngineError::TooLarge {
            size: n,
            max: max_n,
        });
    }
    let records: Vec<_> = input.iter_arc().cloned().collect();
    let total = 1usize << n;
    let mut produces = vec![false; total];
    for (mask, slot) in produces.iter_mut().enumerate() {
        let subset: RecordSet = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| records[i].clone())
            .collect();
        let out = op
            .apply_raw(&unflatten_ports(&subset, op.arity))
            .map_err(|source| EngineError::OperatorFailure {
                operator: op.name.clone(),
                source,
            })?;
        *slot = out.iter().any(|r| r.value == target.value);
    }

    let mut minimal = Vec::new();
    for mask in 0..total {
        if !produces[mask] {
            continue;
        }
        let mut has_smaller = false;
        if mask != 0 {
            // walk proper submasks, including the empty one
            let mut sub = (mask - 1) & mask;
            loop {
                if produces[sub] {
                    has_smaller = true;
                    break;
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
        }
        if !has_smaller {
            let ids: IdSet = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| records[i].id.clone())
                .collect();
            minimal.push(ids);
        }
    }
    minimal.sort();
    Ok(minimal)
}

/// Summaries computed straight from an oracle P_all.
pub fn oracle_union(pall: &[IdSet]) -> IdSet {
    let mut out = IdSet::new();
    for m in pall {
        out.extend(m.iter().cloned());
    }
    out
}

pub fn oracle_intersection(pall: &[IdSet]) -> IdSet {
    match pall.split_first() {
        None => IdSet::new(),
        Some((first, rest)) => first
            .iter()
            .filter(|id| rest.iter().all(|m| m.contains(*id)))
            .cloned()
            .collect(),
    }
}

/// `(id, count)` sorted by count descending, then id.
pub fn oracle_impact(pall: &[IdSet]) -> Vec<(RecordId, u64)> {
    let mut counts: Vec<(RecordId, u64)> = oracle_union(pall)
        .into_iter()
        .map(|id| {
            let c = pall.iter().filter(|m| m.contains(&id)).count() as u64;
            (id, c)
        })
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SyntheticOpSpec;

    fn supporters(n: usize) -> RecordSet {
        (0..n)
            .map(|i| Record::text(0, ((b'a' + i as u8) as char).to_string(), "s"))
            .collect()
    }

    #[test]
    fn three_pairs() {
        let op = SyntheticOpSpec::SupportThreshold { t: 2, key: None }.build("t2");
        let pall = brute_force_pall(&op, &supporters(3), &Record::text(0, "?", "s"), 12).unwrap();
        let names: Vec<Vec<&str>> = pall
            .iter()
            .map(|m| m.iter().map(|i| i.local.as_str()).collect())
            .collect();
        assert_eq!(names, vec![vec!["a", "b"], vec!["a", "c"], vec!["b", "c"]]);
        assert!(oracle_intersection(&pall).is_empty());
        assert_eq!(oracle_union(&pall).len(), 3);
        assert!(oracle_impact(&pall).iter().all(|(_, c)| *c == 2));
    }

    #[test]
    fn identity_singleton() {
        let op = SyntheticOpSpec::Identity.build("id");
        let input: RecordSet = [Record::text(0, "x", "x")].into_iter().collect();
        let pall = brute_force_pall(&op, &input, &Record::text(0, "x", "x"), 12).unwrap();
        assert_eq!(pall, vec![input.id_set()]);
    }

    #[test]
    fn guard() {
        let op = SyntheticOpSpec::SupportThreshold { t: 50, key: None }.build("t50");
        let err =
            brute_force_pall(&op, &supporters(20), &Record::text(0, "?", "s"), 12).unwrap_err();
        assert_eq!(err, EngineError::TooLarge { size: 20, max: 12 });
    }
}
