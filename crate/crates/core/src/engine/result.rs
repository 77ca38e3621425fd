use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{ExecutionBudget, RecordId, RecordSet};

/// Ids of a set of input records.
pub type IdSet = BTreeSet<RecordId>;

/// A minimal input subset producing the target record.
#[derive(Clone, PartialEq, Eq)]
pub struct MiSet(RecordSet);

impl MiSet {
    pub(crate) fn new(members: RecordSet) -> Self {
        MiSet(members)
    }

    pub fn members(&self) -> &RecordSet {
        &self.0
    }

    pub fn into_members(self) -> RecordSet {
        self.0
    }

    pub fn ids(&self) -> IdSet {
        self.0.id_set()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for MiSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.0.ids()).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceKind {
    All,
    Any,
    Uni,
    Int,
    Imp,
}

impl ProvenanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProvenanceKind::All => "all",
            ProvenanceKind::Any => "any",
            ProvenanceKind::Uni => "uni",
            ProvenanceKind::Int => "int",
            ProvenanceKind::Imp => "imp",
        }
    }
}

impl fmt::Display for ProvenanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProvenanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(ProvenanceKind::All),
            "any" => Ok(ProvenanceKind::Any),
            "uni" => Ok(ProvenanceKind::Uni),
            "int" => Ok(ProvenanceKind::Int),
            "imp" => Ok(ProvenanceKind::Imp),
            other => Err(format!(
                "unknown provenance kind `{other}` (expected all, any, uni, int or imp)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactEntry {
    pub record: RecordId,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    All {
        misets: Vec<IdSet>,
        exhausted: bool,
    },
    Any {
        misets: Vec<IdSet>,
        requested_k: Option<usize>,
        exhausted: bool,
    },
    Uni {
        records: IdSet,
        exact: bool,
    },
    Int {
        records: IdSet,
        exact: bool,
    },
    Imp {
        counts: Vec<ImpactEntry>,
        exact: bool,
    },
}

impl Provenance {
    pub fn kind(&self) -> ProvenanceKind {
        match self {
            Provenance::All { .. } => ProvenanceKind::All,
            Provenance::Any { .. } => ProvenanceKind::Any,
            Provenance::Uni { .. } => ProvenanceKind::Uni,
            Provenance::Int { .. } => ProvenanceKind::Int,
            Provenance::Imp { .. } => ProvenanceKind::Imp,
        }
    }

    /// Whether the value is the true provenance of its kind (as opposed to a
    /// partial answer cut short by the budget).
    pub fn is_exact(&self) -> bool {
        match self {
            Provenance::All { exhausted, .. } => *exhausted,
            Provenance::Any {
                misets,
                requested_k,
                exhausted,
            } => *exhausted || requested_k.is_some_and(|k| misets.len() >= k),
            Provenance::Uni { exact, .. }
            | Provenance::Int { exact, .. }
            | Provenance::Imp { exact, .. } => *exact,
        }
    }

    /// Derives a provenance value of `kind` from a list of MISets.
    /// `exhausted` says whether the list is all of them; `k` only applies to
    /// `Any`, which keeps the first `k` in the given order.
    pub fn from_misets(
        kind: ProvenanceKind,
        misets: &[IdSet],
        k: Option<usize>,
        exhausted: bool,
    ) -> Provenance {
        let mut sorted = misets.to_vec();
        match kind {
            ProvenanceKind::All => Provenance::All {
                misets: sorted,
                exhausted,
            },
            ProvenanceKind::Any => {
                let cut = k.map_or(sorted.len(), |k| k.min(sorted.len()));
                let complete = exhausted && cut == sorted.len();
                sorted.truncate(cut);
                Provenance::Any {
                    misets: sorted,
                    requested_k: k,
                    exhausted: complete,
                }
            }
            ProvenanceKind::Uni => Provenance::Uni {
                records: union_of(&sorted),
                exact: exhausted,
            },
            ProvenanceKind::Int => Provenance::Int {
                records: intersection_of(&sorted),
                exact: exhausted,
            },
            ProvenanceKind::Imp => Provenance::Imp {
                counts: impact_of(&sorted),
                exact: exhausted,
            },
        }
    }

    pub fn misets(&self) -> Option<&[IdSet]> {
        match self {
            Provenance::All { misets, .. } | Provenance::Any { misets, .. } => Some(misets),
            _ => None,
        }
    }
}

/// Provenance answer plus the cost of computing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceResult {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub budget_spent: ExecutionBudget,
    pub truncated: bool,
}

impl ProvenanceResult {
    pub fn new(provenance: Provenance, budget_spent: ExecutionBudget, truncated: bool) -> Self {
        ProvenanceResult {
            provenance,
            budget_spent: budget_spent.snapshot(),
            truncated,
        }
    }

    pub fn kind(&self) -> ProvenanceKind {
        self.provenance.kind()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("provenance result serializes")
    }
}

/// Derives every summary from a complete list of MISets.
pub fn union_of(misets: &[IdSet]) -> IdSet {
    misets.iter().flatten().cloned().collect()
}

pub fn intersection_of(misets: &[IdSet]) -> IdSet {
    let mut iter = misets.iter();
    let Some(first) = iter.next() else {
        return IdSet::new();
    };
    iter.fold(first.clone(), |acc, m| {
        acc.intersection(m).cloned().collect()
    })
}

/// Impact counts sorted by count descending, ties by id ascending. Records
/// in no MISet are omitted.
pub fn impact_of(misets: &[IdSet]) -> Vec<ImpactEntry> {
    let mut counts: BTreeMap<&RecordId, u64> = BTreeMap::new();
    for m in misets {
        for id in m {
            *counts.entry(id).or_default() += 1;
        }
    }
    let mut out: Vec<ImpactEntry> = counts
        .into_iter()
        .map(|(record, count)| ImpactEntry {
            record: record.clone(),
            count,
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.record.cmp(&b.record)));
    out
}

/// Keeps only the inclusion-minimal sets, deduplicated, in canonical order.
pub fn minimal_sets(sets: impl IntoIterator<Item = IdSet>) -> Vec<IdSet> {
    let mut all: Vec<IdSet> = sets
        .into_iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    let mut kept: Vec<IdSet> = Vec::new();
    for s in all {
        if !kept.iter().any(|k| k.is_subset(&s)) {
            kept.push(s);
        }
    }
    kept.sort();
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> IdSet {
        xs.iter().map(|x| RecordId::new(0, *x)).collect()
    }

    #[test]
    fn summaries_of_three_pairs() {
        let all = vec![ids(&["a", "b"]), ids(&["a", "c"]), ids(&["b", "c"])];
        assert_eq!(union_of(&all), ids(&["a", "b", "c"]));
        assert!(intersection_of(&all).is_empty());
        let imp = impact_of(&all);
        assert_eq!(
            imp.iter()
                .map(|e| (e.record.local.as_str(), e.count))
                .collect::<Vec<_>>(),
            vec![("a", 2), ("b", 2), ("c", 2)]
        );
    }

    #[test]
    fn impact_sorted_by_count_then_id() {
        let all = vec![ids(&["c", "b"]), ids(&["c"])];
        let imp = impact_of(&all);
        assert_eq!(imp[0].record.local, "c");
        assert_eq!(imp[1].record.local, "b");
    }

    #[test]
    fn minimal_filter() {
        let sets = vec![ids(&["a", "b"]), ids(&["a"]), ids(&["c"]), ids(&["a"])];
        assert_eq!(minimal_sets(sets), vec![ids(&["a"]), ids(&["c"])]);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("int".parse::<ProvenanceKind>(), Ok(ProvenanceKind::Int));
        assert!("most".parse::<ProvenanceKind>().is_err());
    }

    #[test]
    fn result_json_shape() {
        let r = ProvenanceResult::new(
            Provenance::All {
                misets: vec![ids(&["a"])],
                exhausted: true,
            },
            ExecutionBudget::unlimited(),
            false,
        );
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["kind"], "all");
        assert_eq!(v["misets"][0][0], "0:a");
        assert_eq!(v["truncated"], false);
        assert_eq!(v["budget_spent"]["executions"], 0);
        let back: ProvenanceResult = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
