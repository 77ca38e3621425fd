//! Provenance of operator chains from stored per-operator provenance.
//!
//! Each node's recorded output records get their P_all over the node's own
//! input. Membership of a record in the output of the sub-pipeline on a
//! subset of the source input then follows from those sets alone, without
//! running any real operator.

mod special;
mod stored;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{IdSet, Provenance, ProvenanceKind, ProvenanceQuery};
use crate::error::EngineError;
use crate::model::{
    Backing, ExecutionBudget, Executor, Operator, OperatorError, OperatorHandle, PipelineGraph,
    Record, RecordId, RecordSet, Shape,
};
use crate::store::NodeRun;

pub use special::{compose_special, StageOne};
pub use stored::{StoredEntry, StoredProvenance};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompositionError {
    #[error("stored provenance of `{record}` at `{node}` is partial")]
    InexactProvenance { node: String, record: RecordId },
    #[error("no stored provenance for `{record}` at `{node}`")]
    MissingProvenance { node: String, record: RecordId },
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown record: `{record}` is not in the output of `{node}`")]
    UnknownRecord { node: String, record: String },
    #[error("not a chain: {0}")]
    NotAChain(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Exact,
    SupersetOfTruth,
    SubsetOfTruth,
}

/// A composed provenance value and how it relates to the true one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundedResult {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub relation: Relation,
}

impl BoundedResult {
    /// Labels `provenance` by its own exactness: a partial answer is a
    /// subset of the truth, except a partial intersection, which is a
    /// superset.
    pub fn exact(provenance: Provenance) -> Self {
        let relation = if provenance.is_exact() {
            Relation::Exact
        } else if provenance.kind() == ProvenanceKind::Int {
            Relation::SupersetOfTruth
        } else {
            Relation::SubsetOfTruth
        };
        BoundedResult {
            provenance,
            relation,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.relation == Relation::Exact && self.provenance.is_exact()
    }
}

/// A composed answer for a pipeline record, over the source input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedResult {
    #[serde(flatten)]
    pub result: BoundedResult,
    pub budget_spent: ExecutionBudget,
    /// Set when partial stored provenance was used on request.
    pub unsound: bool,
}

/// Which node feeds each port.
#[derive(Debug, Clone)]
struct Topology {
    source: String,
    feeds: BTreeMap<String, BTreeMap<u16, String>>,
}

impl Topology {
    fn of(graph: &PipelineGraph) -> Result<Self, CompositionError> {
        graph.validate().map_err(|v| {
            CompositionError::NotAChain(format!("invalid pipeline ({} problems)", v.len()))
        })?;
        let mut feeds: BTreeMap<String, BTreeMap<u16, String>> = BTreeMap::new();
        for e in &graph.edges {
            feeds
                .entry(e.to.clone())
                .or_default()
                .insert(e.port, e.from.clone());
        }
        Ok(Topology {
            source: graph.source().expect("validated").to_string(),
            feeds,
        })
    }

    /// The node and output record behind an input record of `node`, or `None`
    /// for records of the pipeline input.
    fn producer(&self, node: &str, member: &RecordId) -> Option<(&str, RecordId)> {
        let pred = self.feeds.get(node)?.get(&member.port)?;
        Some((pred.as_str(), RecordId::new(0, member.local.clone())))
    }
}

/// Membership of focus records in the sub-pipeline output, decided from
/// stored provenance only.
#[derive(Debug, Clone)]
pub struct Simulation {
    topo: Topology,
    stored: Arc<StoredProvenance>,
    node: String,
    focus: Vec<RecordId>,
    output: Record,
    arity: usize,
    sound: bool,
}

impl Simulation {
    /// Whether some focus record is produced when the pipeline runs on the
    /// source records `subset` (port-tagged ids).
    pub fn member(&self, subset: &IdSet) -> Result<bool, CompositionError> {
        let mut memo = HashMap::new();
        for id in &self.focus {
            if self.present(&self.node, id, subset, &mut memo)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn present(
        &self,
        node: &str,
        id: &RecordId,
        subset: &IdSet,
        memo: &mut HashMap<(String, RecordId), bool>,
    ) -> Result<bool, CompositionError> {
        let key = (node.to_string(), id.clone());
        if let Some(&known) = memo.get(&key) {
            return Ok(known);
        }
        let entry =
            self.stored
                .get(node, id)
                .ok_or_else(|| CompositionError::MissingProvenance {
                    node: node.to_string(),
                    record: id.clone(),
                })?;
        let mut found = false;
        'misets: for m in &entry.misets {
            for member in m {
                let here = match self.topo.producer(node, member) {
                    None => subset.contains(member),
                    Some((pred, pid)) => self.present(pred, &pid, subset, memo)?,
                };
                if !here {
                    continue 'misets;
                }
            }
            found = true;
            break;
        }
        memo.insert(key, found);
        Ok(found)
    }

    /// False when partial stored provenance went into this simulation.
    pub fn is_sound(&self) -> bool {
        self.sound
    }

    pub fn output(&self) -> &Record {
        &self.output
    }

    /// A virtual operator over the source ports that emits the focus record
    /// exactly when the simulation says it is produced.
    pub fn into_operator(self) -> OperatorHandle {
        // unique per composite: memo caches key on operator names
        let n = COMPOSITES.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let name = format!("compose#{n}:{}:{}", self.node, self.output.id);
        let arity = self.arity;
        OperatorHandle::new(name, arity, Arc::new(self)).with_backing(Backing::Virtual)
    }
}

impl Operator for Simulation {
    fn apply(&self, inputs: &[RecordSet]) -> Result<RecordSet, OperatorError> {
        let ids = crate::model::flatten_ports(inputs).id_set();
        let hit = self
            .member(&ids)
            .map_err(|e| OperatorError::Failed(e.to_string()))?;
        let mut out = RecordSet::new();
        if hit {
            out.insert(self.output.clone());
        }
        Ok(out)
    }
}

static COMPOSITES: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

type MemoKey = (String, RecordId, ProvenanceKind, Option<usize>);

/// Composition queries over one recorded run.
pub struct Composer<'a> {
    graph: &'a PipelineGraph,
    runs: &'a BTreeMap<String, NodeRun>,
    exec: &'a Executor,
    stored: Arc<StoredProvenance>,
    topo: Topology,
    allow_partial: bool,
    unsound: bool,
    memo: HashMap<MemoKey, BoundedResult>,
}

impl<'a> Composer<'a> {
    pub fn new(
        graph: &'a PipelineGraph,
        runs: &'a BTreeMap<String, NodeRun>,
        exec: &'a Executor,
        stored: Arc<StoredProvenance>,
    ) -> Result<Self, CompositionError> {
        Ok(Composer {
            topo: Topology::of(graph)?,
            graph,
            runs,
            exec,
            stored,
            allow_partial: false,
            unsound: false,
            memo: HashMap::new(),
        })
    }

    /// Accepts partial stored provenance; every result is then flagged.
    pub fn allow_partial(mut self, yes: bool) -> Self {
        self.allow_partial = yes;
        self
    }

    pub fn stored(&self) -> &Arc<StoredProvenance> {
        &self.stored
    }

    fn run(&self, node: &str) -> Result<&'a NodeRun, CompositionError> {
        self.runs
            .get(node)
            .ok_or_else(|| CompositionError::UnknownNode(node.to_string()))
    }

    fn op(&self, node: &str) -> Result<&'a OperatorHandle, CompositionError> {
        self.graph
            .node(node)
            .map(|n| &n.op)
            .ok_or_else(|| CompositionError::UnknownNode(node.to_string()))
    }

    /// Stored P_all of one recorded output record, computed on first use.
    pub fn ensure_entry(
        &mut self,
        node: &str,
        id: &RecordId,
        budget: &mut ExecutionBudget,
    ) -> Result<Arc<StoredEntry>, CompositionError> {
        let entry = match self.stored.get(node, id) {
            Some(e) => e,
            None => {
                let run = self.run(node)?;
                let record = run
                    .output
                    .get(id)
                    .ok_or_else(|| CompositionError::UnknownRecord {
                        node: node.to_string(),
                        record: id.to_string(),
                    })?;
                let entry =
                    StoredEntry::compute(self.exec, self.op(node)?, &run.input, record, budget)?;
                self.stored.insert(node, id.clone(), entry)
            }
        };
        if !entry.exact {
            if !self.allow_partial {
                return Err(CompositionError::InexactProvenance {
                    node: node.to_string(),
                    record: id.clone(),
                });
            }
            self.unsound = true;
        }
        Ok(entry)
    }

    /// Ids of the records at `node` value-equal to `target`.
    pub fn focus_of(&self, node: &str, target: &Record) -> Result<Vec<RecordId>, CompositionError> {
        let ids: Vec<RecordId> = self
            .run(node)?
            .output
            .ids_with_digest(&target.digest())
            .cloned()
            .collect();
        if ids.is_empty() {
            return Err(CompositionError::UnknownRecord {
                node: node.to_string(),
                record: target.id.to_string(),
            });
        }
        Ok(ids)
    }

    /// Computes the stored provenance of everything upstream of `focus`
    /// (real executions happen here) and returns the simulation.
    pub fn simulate(
        &mut self,
        node: &str,
        focus: &[RecordId],
        budget: &mut ExecutionBudget,
    ) -> Result<Simulation, CompositionError> {
        let before = self.unsound;
        self.unsound = false;
        let mut stack: Vec<(String, RecordId)> = focus
            .iter()
            .map(|id| (node.to_string(), id.clone()))
            .collect();
        let mut seen = std::collections::HashSet::new();
        while let Some((n, id)) = stack.pop() {
            if !seen.insert((n.clone(), id.clone())) {
                continue;
            }
            let entry = self.ensure_entry(&n, &id, budget)?;
            for member in entry.misets.iter().flatten() {
                if let Some((pred, pid)) = self.topo.producer(&n, member) {
                    stack.push((pred.to_string(), pid));
                }
            }
        }
        let sound = !self.unsound;
        self.unsound |= before;
        let output = self
            .run(node)?
            .output
            .get(&focus[0])
            .cloned()
            .ok_or_else(|| CompositionError::UnknownRecord {
                node: node.to_string(),
                record: focus[0].to_string(),
            })?;
        Ok(Simulation {
            topo: self.topo.clone(),
            stored: self.stored.clone(),
            node: node.to_string(),
            focus: focus.to_vec(),
            output,
            arity: self.op(&self.topo.source)?.arity,
            sound,
        })
    }

    /// The sub-pipeline ending at `node`, restricted to records value-equal
    /// to `target`, as a virtual operator usable by the engine.
    pub fn compose_as_operator(
        &mut self,
        node: &str,
        target: &Record,
        budget: &mut ExecutionBudget,
    ) -> Result<OperatorHandle, CompositionError> {
        let focus = self.focus_of(node, target)?;
        Ok(self.simulate(node, &focus, budget)?.into_operator())
    }

    /// Provenance over the source input of the records at `node` that are
    /// value-equal to `target`.
    pub fn compose_node(
        &mut self,
        node: &str,
        target: &Record,
        kind: ProvenanceKind,
        k: Option<usize>,
        budget: &mut ExecutionBudget,
    ) -> Result<ComposedResult, CompositionError> {
        let start = budget.snapshot();
        self.unsound = false;
        let focus = self.focus_of(node, target)?;
        let result = match focus.as_slice() {
            [one] => self.compose_record(node, one, kind, k, budget)?,
            _ => self.compose_many(node, &focus, kind, k, budget)?,
        };
        Ok(ComposedResult {
            result,
            budget_spent: budget.since(&start),
            unsound: self.unsound,
        })
    }

    /// `path` must run from the source along edges to the node holding
    /// `target`; records of side branches feeding joins on the way are
    /// composed through their own producers.
    pub fn compose_chain(
        &mut self,
        path: &[&str],
        target: &Record,
        kind: ProvenanceKind,
        k: Option<usize>,
        budget: &mut ExecutionBudget,
    ) -> Result<ComposedResult, CompositionError> {
        let (Some(first), Some(last)) = (path.first(), path.last()) else {
            return Err(CompositionError::NotAChain("empty path".into()));
        };
        if *first != self.topo.source {
            return Err(CompositionError::NotAChain(format!(
                "path starts at `{first}`, not at the source `{}`",
                self.topo.source
            )));
        }
        for pair in path.windows(2) {
            if !self
                .graph
                .edges
                .iter()
                .any(|e| e.from == pair[0] && e.to == pair[1])
            {
                return Err(CompositionError::NotAChain(format!(
                    "no edge {} -> {}",
                    pair[0], pair[1]
                )));
            }
        }
        self.compose_node(last, target, kind, k, budget)
    }

    fn record_wise(&self, node: &str) -> bool {
        self.graph
            .node(node)
            .is_some_and(|n| n.op.properties.fast_path_eligible())
    }

    /// Shape of everything strictly upstream of `node`, as one operator.
    fn upstream_shape(&self, node: &str) -> Shape {
        let all = self
            .graph
            .upstream_closure(node)
            .into_iter()
            .filter(|n| *n != node)
            .all(|n| self.record_wise(n));
        if all {
            Shape::OneToMany
        } else {
            Shape::Arbitrary
        }
    }

    fn compose_record(
        &mut self,
        node: &str,
        id: &RecordId,
        kind: ProvenanceKind,
        k: Option<usize>,
        budget: &mut ExecutionBudget,
    ) -> Result<BoundedResult, CompositionError> {
        let key = (node.to_string(), id.clone(), kind, k);
        if let Some(hit) = self.memo.get(&key) {
            return Ok(hit.clone());
        }
        let entry = self.ensure_entry(node, id, budget)?;
        let result = if node == self.topo.source {
            BoundedResult::exact(Provenance::from_misets(kind, &entry.misets, k, entry.exact))
        } else {
            let shape1 = self.upstream_shape(node);
            let shape2 = if self.record_wise(node) {
                Shape::OneToMany
            } else {
                Shape::Arbitrary
            };
            let here = node.to_string();
            let special = {
                let mut stage1 = |r1: &RecordId, kind: ProvenanceKind, k: Option<usize>| {
                    let (pred, pid) = self
                        .topo
                        .producer(&here, r1)
                        .map(|(p, id)| (p.to_string(), id))
                        .ok_or_else(|| {
                            CompositionError::UnsupportedCombination(format!(
                                "`{r1}` has no producer"
                            ))
                        })?;
                    self.compose_record(&pred, &pid, kind, k, budget)
                };
                compose_special(shape1, shape2, &mut stage1, &entry, kind, k)
            };
            match special {
                Ok(r) => r,
                Err(CompositionError::UnsupportedCombination(_)) => {
                    self.via_composite(node, std::slice::from_ref(id), kind, k, budget)?
                }
                Err(e) => return Err(e),
            }
        };
        self.memo.insert(key, result.clone());
        Ok(result)
    }

    /// Several records at `node` share the target value. Bounds combine
    /// per record; exact kinds go through one composite over all of them.
    fn compose_many(
        &mut self,
        node: &str,
        focus: &[RecordId],
        kind: ProvenanceKind,
        k: Option<usize>,
        budget: &mut ExecutionBudget,
    ) -> Result<BoundedResult, CompositionError> {
        if matches!(kind, ProvenanceKind::Uni | ProvenanceKind::Int) {
            let mut parts = Vec::new();
            for id in focus {
                parts.push(self.compose_record(node, id, kind, k, budget)?);
            }
            let sound_bound = |r: &BoundedResult| match kind {
                ProvenanceKind::Uni => r.is_exact() || r.relation == Relation::SupersetOfTruth,
                _ => r.is_exact() || r.relation == Relation::SubsetOfTruth,
            };
            if parts.iter().all(sound_bound) {
                let sets: Vec<IdSet> = parts
                    .iter()
                    .map(|p| match &p.provenance {
                        Provenance::Uni { records, .. } | Provenance::Int { records, .. } => {
                            records.clone()
                        }
                        _ => IdSet::new(),
                    })
                    .collect();
                return Ok(if kind == ProvenanceKind::Uni {
                    BoundedResult {
                        provenance: Provenance::Uni {
                            records: crate::engine::union_of(&sets),
                            exact: false,
                        },
                        relation: Relation::SupersetOfTruth,
                    }
                } else {
                    let all_exact = parts.iter().all(BoundedResult::is_exact);
                    BoundedResult {
                        provenance: Provenance::Int {
                            records: crate::engine::intersection_of(&sets),
                            exact: all_exact,
                        },
                        relation: if all_exact {
                            Relation::Exact
                        } else {
                            Relation::SubsetOfTruth
                        },
                    }
                });
            }
        }
        self.via_composite(node, focus, kind, k, budget)
    }

    fn via_composite(
        &mut self,
        node: &str,
        focus: &[RecordId],
        kind: ProvenanceKind,
        k: Option<usize>,
        budget: &mut ExecutionBudget,
    ) -> Result<BoundedResult, CompositionError> {
        let sim = self.simulate(node, focus, budget)?;
        let output = sim.output().clone();
        let op = sim.into_operator();
        let input = &self.run(&self.topo.source)?.input;
        let q = ProvenanceQuery::new(self.exec, &op, input, &output);
        Ok(BoundedResult::exact(q.compute(kind, k, budget)?.provenance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SyntheticOpSpec;
    use crate::store::execute_pipeline;

    fn chain(first: SyntheticOpSpec, second: SyntheticOpSpec) -> PipelineGraph {
        let mut g = PipelineGraph::new();
        g.add_node("o1", first.build("o1"))
            .add_node("o2", second.build("o2"))
            .add_edge("o1", "o2", 0);
        g
    }

    fn docs(items: &[(&str, &str)]) -> RecordSet {
        items
            .iter()
            .map(|(id, v)| Record::text(0, *id, *v))
            .collect()
    }

    #[test]
    fn identity_of_identity_is_identity() {
        let g = chain(SyntheticOpSpec::Identity, SyntheticOpSpec::Identity);
        let input = docs(&[("a", "x"), ("b", "y")]);
        let exec = Executor::new();
        let runs =
            execute_pipeline(&g, &input, &exec, &mut ExecutionBudget::unlimited(), None).unwrap();
        let mut c = Composer::new(&g, &runs, &exec, Arc::new(StoredProvenance::new())).unwrap();
        let target = Record::text(0, "?", "y");
        let op = c
            .compose_as_operator("o2", &target, &mut ExecutionBudget::unlimited())
            .unwrap();
        assert!(op.is_virtual());
        let out = op.apply_raw(&[docs(&[("b", "y")])]).unwrap();
        assert!(out.contains_by_value(&target));
        assert!(op.apply_raw(&[docs(&[("a", "x")])]).unwrap().is_empty());
    }

    #[test]
    fn empty_subset_produces_nothing() {
        let g = chain(
            SyntheticOpSpec::Splitter {
                delimiter: "|".into(),
            },
            SyntheticOpSpec::SupportThreshold { t: 2, key: None },
        );
        let input = docs(&[("d1", "s|s"), ("d2", "s")]);
        let exec = Executor::new();
        let runs =
            execute_pipeline(&g, &input, &exec, &mut ExecutionBudget::unlimited(), None).unwrap();
        let target = runs["o2"].output.iter().next().unwrap().clone();
        let mut c = Composer::new(&g, &runs, &exec, Arc::new(StoredProvenance::new())).unwrap();
        let focus = c.focus_of("o2", &target).unwrap();
        let sim = c
            .simulate("o2", &focus, &mut ExecutionBudget::unlimited())
            .unwrap();
        let before = exec.real_executions();
        assert!(!sim.member(&IdSet::new()).unwrap());
        assert!(sim
            .member(&[RecordId::new(0, "d1")].into_iter().collect())
            .unwrap());
        assert!(!sim
            .member(&[RecordId::new(0, "d2")].into_iter().collect())
            .unwrap());
        assert_eq!(exec.real_executions(), before);
    }

    #[test]
    fn single_node_chain_is_own_provenance() {
        let mut g = PipelineGraph::new();
        g.add_node(
            "th",
            SyntheticOpSpec::SupportThreshold { t: 2, key: None }.build("th"),
        );
        let input = docs(&[("a", "s"), ("b", "s"), ("c", "s")]);
        let exec = Executor::new();
        let runs =
            execute_pipeline(&g, &input, &exec, &mut ExecutionBudget::unlimited(), None).unwrap();
        let target = runs["th"].output.iter().next().unwrap().clone();
        let mut c = Composer::new(&g, &runs, &exec, Arc::new(StoredProvenance::new())).unwrap();
        let r = c
            .compose_chain(
                &["th"],
                &target,
                ProvenanceKind::All,
                None,
                &mut ExecutionBudget::unlimited(),
            )
            .unwrap();
        assert_eq!(r.result.relation, Relation::Exact);
        assert_eq!(r.result.provenance.misets().unwrap().len(), 3);
    }

    #[test]
    fn partial_provenance_refused_unless_allowed() {
        let g = chain(
            SyntheticOpSpec::Identity,
            SyntheticOpSpec::SupportThreshold { t: 2, key: None },
        );
        let input = docs(&[("a", "s"), ("b", "s"), ("c", "s"), ("d", "s")]);
        let exec = Executor::new();
        let runs =
            execute_pipeline(&g, &input, &exec, &mut ExecutionBudget::unlimited(), None).unwrap();
        let target = runs["o2"].output.iter().next().unwrap().clone();
        let stored = Arc::new(StoredProvenance::new());
        let mut c = Composer::new(&g, &runs, &exec, stored.clone()).unwrap();
        let err = c
            .compose_node(
                "o2",
                &target,
                ProvenanceKind::Uni,
                None,
                &mut ExecutionBudget::with_limit(4),
            )
            .unwrap_err();
        assert!(
            matches!(err, CompositionError::InexactProvenance { .. }),
            "{err}"
        );

        let mut c = Composer::new(&g, &runs, &exec, stored)
            .unwrap()
            .allow_partial(true);
        let r = c
            .compose_node(
                "o2",
                &target,
                ProvenanceKind::Uni,
                None,
                &mut ExecutionBudget::unlimited(),
            )
            .unwrap();
        assert!(r.unsound);
    }

    #[test]
    fn bad_paths_rejected() {
        let g = chain(SyntheticOpSpec::Identity, SyntheticOpSpec::Identity);
        let input = docs(&[("a", "x")]);
        let exec = Executor::new();
        let runs =
            execute_pipeline(&g, &input, &exec, &mut ExecutionBudget::unlimited(), None).unwrap();
        let mut c = Composer::new(&g, &runs, &exec, Arc::new(StoredProvenance::new())).unwrap();
        let t = Record::text(0, "a", "x");
        let mut b = ExecutionBudget::unlimited();
        assert!(matches!(
            c.compose_chain(&["o2"], &t, ProvenanceKind::Int, None, &mut b),
            Err(CompositionError::NotAChain(_))
        ));
        assert!(matches!(
            c.compose_chain(
                &["o1", "o2"],
                &Record::text(0, "z", "zz"),
                ProvenanceKind::Int,
                None,
                &mut b
            ),
            Err(CompositionError::UnknownRecord { .. })
        ));
    }
}
