use std::collections::BTreeMap;

use crate::engine::{intersection_of, minimal_sets, union_of, IdSet, Provenance, ProvenanceKind};
use crate::model::{RecordId, Shape};

use super::stored::StoredEntry;
use super::{BoundedResult, CompositionError, Relation};

/// Composed provenance of a stage-1 record (an input record of stage 2).
pub type StageOne<'s> = dyn FnMut(&RecordId, ProvenanceKind, Option<usize>) -> Result<BoundedResult, CompositionError>
    + 's;

fn unsupported(msg: impl Into<String>) -> CompositionError {
    CompositionError::UnsupportedCombination(msg.into())
}

/// The shortcut rows for one hop. `stage2` is the stored P_all of the output
/// record over the intermediate records; `stage1` answers for one
/// intermediate record. `UnsupportedCombination` sends the caller to the
/// virtual composite.
pub fn compose_special(
    shape1: Shape,
    shape2: Shape,
    stage1: &mut StageOne<'_>,
    stage2: &StoredEntry,
    kind: ProvenanceKind,
    k: Option<usize>,
) -> Result<BoundedResult, CompositionError> {
    if kind == ProvenanceKind::Imp {
        return Err(unsupported("impact is computed on the composite"));
    }
    if !stage2.exact {
        return Err(unsupported("second-stage provenance is partial"));
    }
    let misets = &stage2.misets;

    if shape2.is_record_wise() {
        if let [only] = misets.as_slice() {
            if only.len() == 1 {
                let r1 = only.iter().next().expect("one member");
                return stage1(r1, kind, k);
            }
        }
    }

    if shape1.is_record_wise() {
        let mut source: BTreeMap<&RecordId, RecordId> = BTreeMap::new();
        for r1 in misets.iter().flatten() {
            if source.contains_key(r1) {
                continue;
            }
            let sub = stage1(r1, ProvenanceKind::All, None)?;
            let single = match (sub.relation, sub.provenance.misets()) {
                (Relation::Exact, Some([m])) if sub.provenance.is_exact() && m.len() == 1 => {
                    m.iter().next().cloned()
                }
                _ => None,
            };
            let Some(src) = single else {
                return Err(unsupported(format!(
                    "`{r1}` has no unique single-record source"
                )));
            };
            source.insert(r1, src);
        }
        let composed = minimal_sets(
            misets
                .iter()
                .map(|m| m.iter().map(|r1| source[r1].clone()).collect::<IdSet>()),
        );
        return Ok(BoundedResult::exact(Provenance::from_misets(
            kind, &composed, k, true,
        )));
    }

    match kind {
        ProvenanceKind::Uni => {
            let mut records = IdSet::new();
            for r1 in union_of(misets) {
                let sub = stage1(&r1, ProvenanceKind::Uni, None)?;
                match (&sub.provenance, sub.relation) {
                    (Provenance::Uni { records: r, .. }, Relation::Exact)
                        if sub.provenance.is_exact() =>
                    {
                        records.extend(r.iter().cloned())
                    }
                    (Provenance::Uni { records: r, .. }, Relation::SupersetOfTruth) => {
                        records.extend(r.iter().cloned())
                    }
                    _ => return Err(unsupported(format!("no upper bound for `{r1}`"))),
                }
            }
            Ok(BoundedResult {
                provenance: Provenance::Uni {
                    records,
                    exact: false,
                },
                relation: Relation::SupersetOfTruth,
            })
        }
        ProvenanceKind::Int => {
            let mut records = IdSet::new();
            for r1 in intersection_of(misets) {
                let sub = stage1(&r1, ProvenanceKind::Int, None)?;
                match (&sub.provenance, sub.relation) {
                    (Provenance::Int { records: r, .. }, Relation::Exact)
                        if sub.provenance.is_exact() =>
                    {
                        records.extend(r.iter().cloned())
                    }
                    (Provenance::Int { records: r, .. }, Relation::SubsetOfTruth) => {
                        records.extend(r.iter().cloned())
                    }
                    _ => return Err(unsupported(format!("no lower bound for `{r1}`"))),
                }
            }
            Ok(BoundedResult {
                provenance: Provenance::Int {
                    records,
                    exact: false,
                },
                relation: Relation::SubsetOfTruth,
            })
        }
        _ => Err(unsupported(format!(
            "{kind} across two arbitrary operators"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Matching;

    fn id(s: &str) -> RecordId {
        RecordId::new(0, s)
    }

    fn set(ids: &[&str]) -> IdSet {
        ids.iter().map(|s| id(s)).collect()
    }

    fn entry(misets: Vec<IdSet>) -> StoredEntry {
        StoredEntry {
            misets,
            exact: true,
            matching: Matching::Record,
        }
    }

    /// Segment `dN/sK` comes from document `dN` alone.
    fn segments(
        r1: &RecordId,
        kind: ProvenanceKind,
        k: Option<usize>,
    ) -> Result<BoundedResult, CompositionError> {
        let doc = r1.local.split('/').next().unwrap();
        Ok(BoundedResult::exact(Provenance::from_misets(
            kind,
            &[set(&[doc])],
            k,
            true,
        )))
    }

    #[test]
    fn record_wise_first_stage_substitutes_sources() {
        // threshold T=2 over three segments from two documents
        let stage2 = entry(vec![
            set(&["d1/s0", "d1/s1"]),
            set(&["d1/s0", "d2/s0"]),
            set(&["d1/s1", "d2/s0"]),
        ]);
        let out = compose_special(
            Shape::OneToMany,
            Shape::Arbitrary,
            &mut segments,
            &stage2,
            ProvenanceKind::All,
            None,
        )
        .unwrap();
        assert_eq!(out.relation, Relation::Exact);
        assert_eq!(out.provenance.misets().unwrap(), &[set(&["d1"])]);
    }

    #[test]
    fn record_wise_second_stage_passes_through() {
        let stage2 = entry(vec![set(&["x"])]);
        let mut inner = |_: &RecordId, kind, k| {
            Ok(BoundedResult::exact(Provenance::from_misets(
                kind,
                &[set(&["a", "b"]), set(&["c"])],
                k,
                true,
            )))
        };
        let out = compose_special(
            Shape::Arbitrary,
            Shape::OneToOne,
            &mut inner,
            &stage2,
            ProvenanceKind::Int,
            None,
        )
        .unwrap();
        assert_eq!(
            out.provenance,
            Provenance::Int {
                records: IdSet::new(),
                exact: true
            }
        );
    }

    #[test]
    fn arbitrary_pair_gives_labelled_bounds() {
        let stage2 = entry(vec![set(&["x", "y"]), set(&["x", "z"])]);
        let mut inner = |r: &RecordId, kind, k| {
            let m = match r.local.as_str() {
                "x" => vec![set(&["a"])],
                "y" => vec![set(&["b", "c"])],
                _ => vec![set(&["c", "d"]), set(&["e"])],
            };
            Ok(BoundedResult::exact(Provenance::from_misets(
                kind, &m, k, true,
            )))
        };
        let uni = compose_special(
            Shape::Arbitrary,
            Shape::Arbitrary,
            &mut inner,
            &stage2,
            ProvenanceKind::Uni,
            None,
        )
        .unwrap();
        assert_eq!(uni.relation, Relation::SupersetOfTruth);
        assert_eq!(
            uni.provenance,
            Provenance::Uni {
                records: set(&["a", "b", "c", "d", "e"]),
                exact: false
            }
        );
        let int = compose_special(
            Shape::Arbitrary,
            Shape::Arbitrary,
            &mut inner,
            &stage2,
            ProvenanceKind::Int,
            None,
        )
        .unwrap();
        assert_eq!(int.relation, Relation::SubsetOfTruth);
        assert_eq!(
            int.provenance,
            Provenance::Int {
                records: set(&["a"]),
                exact: false
            }
        );
        let all = compose_special(
            Shape::Arbitrary,
            Shape::Arbitrary,
            &mut inner,
            &stage2,
            ProvenanceKind::All,
            None,
        );
        assert!(matches!(
            all,
            Err(CompositionError::UnsupportedCombination(_))
        ));
    }

    #[test]
    fn impact_and_partial_stage_are_refused() {
        let mut partial = entry(vec![set(&["x"])]);
        assert!(compose_special(
            Shape::OneToOne,
            Shape::OneToOne,
            &mut segments,
            &partial,
            ProvenanceKind::Imp,
            None
        )
        .is_err());
        partial.exact = false;
        assert!(compose_special(
            Shape::OneToOne,
            Shape::OneToOne,
            &mut segments,
            &partial,
            ProvenanceKind::All,
            None
        )
        .is_err());
    }
}
