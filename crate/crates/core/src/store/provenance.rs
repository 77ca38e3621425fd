//! Loaded runs and cached provenance answers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::config::ConfigError;
use super::run::NodeRun;
use super::trace::{load_trace, persist_trace, write_atomic, RunTrace, TraceError};
use crate::compose::{
    BoundedResult, Composer, CompositionError, Relation, StoredEntry, StoredProvenance,
};
use crate::engine::{
    EnumerationEnd, IdSet, Provenance, ProvenanceKind, ProvenanceQuery, ProvenanceResult, Step,
};
use crate::error::EngineError;
use crate::fastpath::{provenance_direct_scan, FastPathError};
use crate::model::{
    ExecutionBudget, Executor, OperatorHandle, PipelineGraph, Record, RecordId, RecordSet,
};

pub const DATA_DIR_ENV: &str = "PROBER_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "prober-data";
/// Share of cache hits recomputed when auditing is on.
pub const DEFAULT_AUDIT_RATE: f64 = 0.05;
const STORED: &str = "provenance/stored.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown record: `{record}` is not an output of node `{node}`")]
    UnknownRecord { node: String, record: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cached result for {0} differs from a fresh recomputation")]
    CacheMismatch(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Composition(CompositionError),
}

impl From<CompositionError> for StoreError {
    fn from(e: CompositionError) -> Self {
        match e {
            CompositionError::UnknownRecord { node, record } => {
                StoreError::UnknownRecord { node, record }
            }
            CompositionError::UnknownNode(n) => StoreError::UnknownNode(n),
            CompositionError::Engine(e) => StoreError::Engine(e),
            other => StoreError::Composition(other),
        }
    }
}

impl StoreError {
    /// Problems with what was asked for, as opposed to failures computing it.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            StoreError::UnknownRun(_)
                | StoreError::UnknownNode(_)
                | StoreError::UnknownRecord { .. }
                | StoreError::InvalidRequest(_)
                | StoreError::Trace(_)
                | StoreError::Config(_)
        )
    }
}

/// A provenance question about a stored run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProvenanceRequest {
    /// Defaults to the sink.
    #[serde(default, alias = "nodeId")]
    pub node: Option<String>,
    /// Record id at the node, or a prefix (8+ hex digits) of its value digest.
    pub record: String,
    pub kind: ProvenanceKind,
    #[serde(default)]
    pub k: Option<usize>,
    /// Size bound for `All`.
    #[serde(default)]
    pub bound: Option<usize>,
    /// Trace back to the pipeline input instead of the node's own input.
    #[serde(default)]
    pub chain: bool,
    /// Execution limit.
    #[serde(default)]
    pub budget: Option<u64>,
}

impl ProvenanceRequest {
    pub fn new(record: impl Into<String>, kind: ProvenanceKind) -> Self {
        ProvenanceRequest {
            node: None,
            record: record.into(),
            kind,
            k: None,
            bound: None,
            chain: false,
            budget: None,
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: &str| Err(StoreError::InvalidRequest(m.into()));
        match (self.kind, self.k, self.bound) {
            (ProvenanceKind::Any, Some(0), _) => bad("k must be at least 1"),
            (ProvenanceKind::Any, _, None) => Ok(()),
            (_, Some(_), _) => bad("k only applies to kind any"),
            (ProvenanceKind::All, None, Some(0)) => bad("bound must be at least 1"),
            (ProvenanceKind::All, None, _) => Ok(()),
            (_, _, Some(_)) => bad("bound only applies to kind all"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DirectScan,
    Engine,
    Bounded,
    Composition,
}

/// A provenance answer as stored in the cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub run_id: String,
    pub node: String,
    pub record: RecordId,
    pub digest: String,
    pub chain: bool,
    pub method: Method,
    #[serde(flatten)]
    pub result: BoundedResult,
    pub budget_spent: ExecutionBudget,
    pub truncated: bool,
    pub unsound: bool,
}

#[derive(Debug, Clone)]
pub struct Served {
    pub answer: Answer,
    /// The serialized answer; identical bytes on every cache hit.
    pub json: String,
    pub cache_hit: bool,
}

#[derive(Debug, Serialize)]
struct CacheKey<'a> {
    run_id: &'a str,
    node: &'a str,
    chain: bool,
    digest: &'a str,
    kind: ProvenanceKind,
    k: Option<usize>,
    bound: Option<usize>,
}

/// How a streamed enumeration ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamEnd {
    Exhausted,
    Limit,
    BudgetExhausted,
    Cancelled,
}

impl From<EnumerationEnd> for StreamEnd {
    fn from(e: EnumerationEnd) -> Self {
        match e {
            EnumerationEnd::Exhausted => StreamEnd::Exhausted,
            EnumerationEnd::Limit => StreamEnd::Limit,
            EnumerationEnd::BudgetExhausted => StreamEnd::BudgetExhausted,
            EnumerationEnd::Cancelled => StreamEnd::Cancelled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StreamSummary {
    pub exhausted: bool,
    pub end: StreamEnd,
    pub budget_spent: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSummary {
    pub run_id: String,
    pub config_hash: String,
    pub created_at: u64,
    pub nodes: Vec<String>,
    pub sink: Option<String>,
}

/// The directory holding every run, `<root>/runs/<runId>/`.
#[derive(Debug, Clone)]
pub struct TraceStore {
    root: PathBuf,
}

impl TraceStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        TraceStore { root: root.into() }
    }

    /// Root from `PROBER_DATA_DIR`, else `./prober-data`.
    pub fn from_env() -> Self {
        Self::new(
            std::env::var_os(DATA_DIR_ENV)
                .map_or_else(|| PathBuf::from(DEFAULT_DATA_DIR), PathBuf::from),
        )
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn save(&self, trace: &RunTrace) -> Result<PathBuf, StoreError> {
        let dir = self.run_dir(trace.run_id.as_str());
        persist_trace(trace, &dir)?;
        Ok(dir)
    }

    /// Runs that load cleanly, by id.
    pub fn list_runs(&self) -> Result<Vec<RunSummary>, StoreError> {
        let dir = self.root.join("runs");
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(StoreError::Io { path: dir, source }),
        };
        let mut out = Vec::new();
        for entry in entries.flatten() {
            if let Ok(t) = load_trace(&entry.path()) {
                out.push(RunSummary {
                    sink: t.sink().map(str::to_string),
                    nodes: t.config.nodes.iter().map(|n| n.id.clone()).collect(),
                    run_id: t.run_id,
                    config_hash: t.config_hash,
                    created_at: t.created_at,
                });
            }
        }
        out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        Ok(out)
    }

    pub fn open(&self, run_id: &str) -> Result<LoadedRun, StoreError> {
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
            return Err(StoreError::UnknownRun(run_id.to_string()));
        }
        let dir = self.run_dir(run_id);
        if !dir.join("trace.json").exists() {
            return Err(StoreError::UnknownRun(run_id.to_string()));
        }
        LoadedRun::open(&dir)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredLine {
    node: String,
    record: RecordId,
    entry: StoredEntry,
}

/// A stored run ready for provenance queries. Safe to share between
/// threads; the trace itself is never modified.
pub struct LoadedRun {
    pub trace: RunTrace,
    dir: PathBuf,
    graph: PipelineGraph,
    runs: BTreeMap<String, NodeRun>,
    exec: Executor,
    stored: Arc<StoredProvenance>,
    downgraded: RwLock<BTreeSet<String>>,
    audit_rate: f64,
}

impl LoadedRun {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let trace = load_trace(dir)?;
        let graph = trace.config.build_graph(Some(dir))?;
        let stored = StoredProvenance::new();
        if let Ok(text) = std::fs::read_to_string(dir.join(STORED)) {
            if let Ok(lines) = serde_json::from_str::<Vec<StoredLine>>(&text) {
                for l in lines {
                    stored.insert(&l.node, l.record, l.entry);
                }
            }
        }
        Ok(LoadedRun {
            runs: trace.node_runs(),
            trace,
            dir: dir.to_path_buf(),
            graph,
            exec: Executor::new(),
            stored: Arc::new(stored),
            downgraded: RwLock::new(BTreeSet::new()),
            audit_rate: 0.0,
        })
    }

    /// Recompute this share of cache hits and fail on any difference.
    pub fn with_audit(mut self, rate: f64) -> Self {
        self.audit_rate = rate.clamp(0.0, 1.0);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn graph(&self) -> &PipelineGraph {
        &self.graph
    }

    pub fn executor(&self) -> &Executor {
        &self.exec
    }

    pub fn node_run(&self, node: &str) -> Result<&NodeRun, StoreError> {
        self.runs
            .get(node)
            .ok_or_else(|| StoreError::UnknownNode(node.to_string()))
    }

    fn node_or_sink<'r>(&'r self, node: Option<&'r str>) -> Result<&'r str, StoreError> {
        let node = match node {
            Some(n) => n,
            None => self
                .trace
                .sink()
                .ok_or_else(|| StoreError::InvalidRequest("the pipeline has no sink".into()))?,
        };
        self.node_run(node)?;
        Ok(node)
    }

    /// Finds `record` among the outputs of `node`: by id first, then by a
    /// unique value-digest prefix of at least 8 hex digits.
    pub fn resolve(&self, node: &str, record: &str) -> Result<Record, StoreError> {
        let output = &self.node_run(node)?.output;
        let unknown = || StoreError::UnknownRecord {
            node: node.to_string(),
            record: record.to_string(),
        };
        let id = record
            .parse::<RecordId>()
            .unwrap_or_else(|_| RecordId::new(0, record));
        if let Some(r) = output.get(&id) {
            return Ok(r.clone());
        }
        let prefix = record.to_ascii_lowercase();
        if prefix.len() < 8 || !prefix.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(unknown());
        }
        let mut hits = output
            .iter()
            .filter(|r| r.digest().to_hex().starts_with(&prefix));
        let first = hits.next().ok_or_else(unknown)?;
        if hits.any(|r| r.digest() != first.digest()) {
            return Err(StoreError::InvalidRequest(format!(
                "digest prefix `{record}` is ambiguous"
            )));
        }
        Ok(first.clone())
    }

    fn op(&self, node: &str) -> Result<&OperatorHandle, StoreError> {
        self.graph
            .node(node)
            .map(|n| &n.op)
            .ok_or_else(|| StoreError::UnknownNode(node.to_string()))
    }

    fn eligible(&self, node: &str) -> Result<bool, StoreError> {
        Ok(self.op(node)?.properties.fast_path_eligible()
            && !self
                .downgraded
                .read()
                .expect("downgrade lock")
                .contains(node))
    }

    /// True once a fast path was refused at query time.
    pub fn is_downgraded(&self, node: &str) -> bool {
        self.downgraded
            .read()
            .expect("downgrade lock")
            .contains(node)
    }

    fn cache_path(&self, key: &CacheKey) -> (PathBuf, [u8; 32]) {
        let h: [u8; 32] = Sha256::digest(serde_json::to_vec(key).expect("key serializes")).into();
        (
            self.dir
                .join("provenance")
                .join(format!("{}.json", hex::encode(h))),
            h,
        )
    }

    /// The cached answer, or a fresh one (then cached unless truncated).
    pub fn provenance_get_or_compute(
        &self,
        req: &ProvenanceRequest,
        budget: &mut ExecutionBudget,
    ) -> Result<Served, StoreError> {
        req.validate()?;
        let node = self.node_or_sink(req.node.as_deref())?;
        let target = self.resolve(node, &req.record)?;
        let digest = target.digest().to_hex();
        let key = CacheKey {
            run_id: &self.trace.run_id,
            node,
            chain: req.chain,
            digest: &digest,
            kind: req.kind,
            k: req.k,
            bound: req.bound,
        };
        let (path, h) = self.cache_path(&key);
        if let Ok(json) = std::fs::read_to_string(&path) {
            if let Ok(answer) = serde_json::from_str::<Answer>(&json) {
                let audit = (u16::from_be_bytes([h[0], h[1]]) as f64) < self.audit_rate * 65536.0;
                if audit {
                    let fresh =
                        self.compute(node, &target, req, &mut ExecutionBudget::unlimited())?;
                    if fresh.result != answer.result {
                        return Err(StoreError::CacheMismatch(path.display().to_string()));
                    }
                }
                return Ok(Served {
                    answer,
                    json,
                    cache_hit: true,
                });
            }
        }
        let answer = self.compute(node, &target, req, budget)?;
        let json = serde_json::to_string(&answer).expect("answer serializes");
        if !answer.truncated {
            write_atomic(&path, json.as_bytes())
                .map_err(|source| StoreError::Io { path, source })?;
        }
        Ok(Served {
            answer,
            json,
            cache_hit: false,
        })
    }

    fn compute(
        &self,
        node: &str,
        target: &Record,
        req: &ProvenanceRequest,
        budget: &mut ExecutionBudget,
    ) -> Result<Answer, StoreError> {
        let answer =
            |method, result: BoundedResult, spent: ExecutionBudget, truncated, unsound| Answer {
                run_id: self.trace.run_id.clone(),
                node: node.to_string(),
                record: target.id.clone(),
                digest: target.digest().to_hex(),
                chain: req.chain,
                method,
                result,
                budget_spent: spent,
                truncated,
                unsound,
            };
        let plain = |method, r: ProvenanceResult| {
            answer(
                method,
                BoundedResult::exact(r.provenance),
                r.budget_spent,
                r.truncated,
                false,
            )
        };

        if req.chain {
            let mut c = Composer::new(&self.graph, &self.runs, &self.exec, self.stored.clone())?;
            let before = self.stored.len();
            let out = if let Some(bound) = req.bound {
                let start = budget.snapshot();
                let op = c.compose_as_operator(node, target, budget)?;
                let q = ProvenanceQuery::new(&self.exec, &op, &self.trace.source_input, target);
                let r = q.compute_p_all_bounded(bound, budget)?;
                let mut a = plain(Method::Composition, r);
                a.budget_spent = budget.since(&start);
                a
            } else {
                let r = c.compose_node(node, target, req.kind, req.k, budget)?;
                let truncated =
                    r.result.relation == Relation::Exact && !r.result.provenance.is_exact();
                answer(
                    Method::Composition,
                    r.result,
                    r.budget_spent,
                    truncated,
                    r.unsound,
                )
            };
            if self.stored.len() != before {
                self.save_stored()?;
            }
            return Ok(out);
        }

        let op = self.op(node)?;
        let input = &self.node_run(node)?.input;
        let q = ProvenanceQuery::new(&self.exec, op, input, target);
        if let Some(bound) = req.bound {
            return Ok(plain(
                Method::Bounded,
                q.compute_p_all_bounded(bound, budget)?,
            ));
        }
        if self.eligible(node)? {
            match provenance_direct_scan(&self.exec, op, input, target, req.kind, req.k, budget) {
                Ok(r) => return Ok(plain(Method::DirectScan, r)),
                Err(FastPathError::ShapeViolation { .. }) => {
                    self.downgraded
                        .write()
                        .expect("downgrade lock")
                        .insert(node.to_string());
                }
                Err(FastPathError::Engine(e)) => return Err(e.into()),
                Err(_) => {}
            }
        }
        Ok(plain(Method::Engine, q.compute(req.kind, req.k, budget)?))
    }

    fn save_stored(&self) -> Result<(), StoreError> {
        let lines: Vec<StoredLine> = self
            .stored
            .entries()
            .into_iter()
            .map(|(node, record, entry)| StoredLine {
                node,
                record,
                entry,
            })
            .collect();
        let path = self.dir.join(STORED);
        write_atomic(
            &path,
            &serde_json::to_vec(&lines).expect("stored provenance serializes"),
        )
        .map_err(|source| StoreError::Io { path, source })
    }

    /// Delivers MISets one at a time for `any`/`all` requests, in the same
    /// order [`Self::provenance_get_or_compute`] reports them. `on_miset`
    /// returning `false` stops the search.
    pub fn stream_misets(
        &self,
        req: &ProvenanceRequest,
        budget: &mut ExecutionBudget,
        mut on_miset: impl FnMut(&IdSet) -> bool,
    ) -> Result<StreamSummary, StoreError> {
        req.validate()?;
        if !matches!(req.kind, ProvenanceKind::Any | ProvenanceKind::All) {
            return Err(StoreError::InvalidRequest(format!(
                "kind {} does not stream",
                req.kind
            )));
        }
        let node = self.node_or_sink(req.node.as_deref())?;
        let target = self.resolve(node, &req.record)?;
        let start = budget.snapshot();

        let incremental = !req.chain && req.bound.is_none() && !self.eligible(node)?;
        if !incremental {
            let served = self.provenance_get_or_compute(req, budget)?;
            let misets = served.answer.result.provenance.misets().unwrap_or_default();
            for (i, m) in misets.iter().enumerate() {
                if !on_miset(m) {
                    let end = if i + 1 == misets.len() && served.answer.result.provenance.is_exact()
                    {
                        StreamEnd::Exhausted
                    } else {
                        StreamEnd::Cancelled
                    };
                    return Ok(self.summary(end, budget, &start));
                }
            }
            let end = match &served.answer.result.provenance {
                Provenance::All {
                    exhausted: true, ..
                }
                | Provenance::Any {
                    exhausted: true, ..
                } => StreamEnd::Exhausted,
                _ if served.answer.truncated => StreamEnd::BudgetExhausted,
                _ => StreamEnd::Limit,
            };
            return Ok(self.summary(end, budget, &start));
        }

        let op = self.op(node)?;
        let input = &self.node_run(node)?.input;
        let q = ProvenanceQuery::new(&self.exec, op, input, &target);
        let mut found = Vec::new();
        let end = q.enumerate_each(req.k, budget, |step| match step {
            Step::Found(m) => {
                let ids = m.ids();
                let go = on_miset(&ids);
                found.push(ids);
                go
            }
            Step::End(_) => true,
        })?;
        if matches!(end, EnumerationEnd::Exhausted | EnumerationEnd::Limit) {
            self.remember_stream(node, &target, req, &found, end, budget.since(&start));
        }
        Ok(self.summary(end.into(), budget, &start))
    }

    /// Caches a completed stream as if it had been computed in one go.
    fn remember_stream(
        &self,
        node: &str,
        target: &Record,
        req: &ProvenanceRequest,
        found: &[IdSet],
        end: EnumerationEnd,
        spent: ExecutionBudget,
    ) {
        let exhausted = end == EnumerationEnd::Exhausted;
        let provenance = match req.kind {
            ProvenanceKind::Any => Provenance::Any {
                misets: found.to_vec(),
                requested_k: req.k,
                exhausted,
            },
            _ => Provenance::All {
                misets: found.to_vec(),
                exhausted,
            },
        };
        let digest = target.digest().to_hex();
        let key = CacheKey {
            run_id: &self.trace.run_id,
            node,
            chain: false,
            digest: &digest,
            kind: req.kind,
            k: req.k,
            bound: None,
        };
        let (path, _) = self.cache_path(&key);
        if path.exists() {
            return;
        }
        let answer = Answer {
            run_id: self.trace.run_id.clone(),
            node: node.to_string(),
            record: target.id.clone(),
            digest,
            chain: false,
            method: Method::Engine,
            result: BoundedResult::exact(provenance),
            budget_spent: spent.snapshot(),
            truncated: false,
            unsound: false,
        };
        let _ = write_atomic(
            &path,
            serde_json::to_string(&answer)
                .expect("answer serializes")
                .as_bytes(),
        );
    }

    fn summary(
        &self,
        end: StreamEnd,
        budget: &ExecutionBudget,
        start: &ExecutionBudget,
    ) -> StreamSummary {
        StreamSummary {
            exhausted: end == StreamEnd::Exhausted,
            end,
            budget_spent: budget.since(start).charged(),
        }
    }

    /// Output records of `node`, `page_size` per page from page 0.
    pub fn outputs_page(
        &self,
        node: &str,
        page: usize,
        page_size: usize,
    ) -> Result<Vec<Record>, StoreError> {
        Ok(self
            .node_run(node)?
            .output
            .iter()
            .skip(page * page_size)
            .take(page_size)
            .cloned()
            .collect())
    }

    /// The input records `ids` refer to at `node` (or at the pipeline input
    /// for chain answers).
    pub fn members(&self, node: &str, chain: bool, ids: &IdSet) -> Result<RecordSet, StoreError> {
        let input = if chain {
            &self.trace.source_input
        } else {
            &self.node_run(node)?.input
        };
        Ok(input.restrict(ids))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SyntheticOpSpec;
    use crate::store::config::{NodeConfig, PipelineConfig};
    use crate::store::run_pipeline;

    fn threshold_run(dir: &Path) -> LoadedRun {
        let config = PipelineConfig {
            nodes: vec![NodeConfig::synthetic(
                "th",
                &SyntheticOpSpec::SupportThreshold { t: 2, key: None },
            )],
            edges: vec![],
        };
        let input: RecordSet = ["a", "b", "c"]
            .iter()
            .map(|id| Record::text(0, *id, "s"))
            .collect();
        let (trace, _) = run_pipeline(
            &config,
            None,
            &input,
            &Executor::new(),
            &mut ExecutionBudget::unlimited(),
            Some("t2"),
            Some(0),
        )
        .unwrap();
        let store = TraceStore::new(dir);
        store.save(&trace).unwrap();
        store.open("t2").unwrap()
    }

    fn only_output(run: &LoadedRun) -> String {
        run.node_run("th")
            .unwrap()
            .output
            .iter()
            .next()
            .unwrap()
            .id
            .local
            .clone()
    }

    #[test]
    fn second_request_is_a_byte_identical_hit() {
        let d = tempfile::tempdir().unwrap();
        let run = threshold_run(d.path());
        let req = ProvenanceRequest::new(only_output(&run), ProvenanceKind::Int);
        let first = run
            .provenance_get_or_compute(&req, &mut ExecutionBudget::unlimited())
            .unwrap();
        assert!(!first.cache_hit);
        assert_eq!(first.answer.method, Method::Engine);
        assert_eq!(
            first.answer.result.provenance,
            Provenance::Int {
                records: IdSet::new(),
                exact: true
            }
        );
        let before = run.executor().real_executions();
        let mut b = ExecutionBudget::unlimited();
        let second = run.provenance_get_or_compute(&req, &mut b).unwrap();
        assert!(second.cache_hit);
        assert_eq!(second.json, first.json);
        assert_eq!(run.executor().real_executions(), before);
        assert_eq!(b.executions, 0);

        let reopened = TraceStore::new(d.path())
            .open("t2")
            .unwrap()
            .with_audit(1.0);
        let third = reopened
            .provenance_get_or_compute(&req, &mut ExecutionBudget::unlimited())
            .unwrap();
        assert!(third.cache_hit);
        assert_eq!(third.json, first.json);
    }

    #[test]
    fn any_with_spare_k_is_exhausted() {
        let d = tempfile::tempdir().unwrap();
        let run = threshold_run(d.path());
        let mut req = ProvenanceRequest::new(only_output(&run), ProvenanceKind::Any);
        req.k = Some(5);
        let a = run
            .provenance_get_or_compute(&req, &mut ExecutionBudget::unlimited())
            .unwrap()
            .answer;
        let Provenance::Any {
            misets, exhausted, ..
        } = a.result.provenance
        else {
            panic!()
        };
        assert_eq!(misets.len(), 3);
        assert!(exhausted);
    }

    #[test]
    fn stream_equals_computed_all() {
        let d = tempfile::tempdir().unwrap();
        let run = threshold_run(d.path());
        let req = ProvenanceRequest::new(only_output(&run), ProvenanceKind::All);
        let mut seen = Vec::new();
        let s = run
            .stream_misets(&req, &mut ExecutionBudget::unlimited(), |m| {
                seen.push(m.clone());
                true
            })
            .unwrap();
        assert!(s.exhausted);
        let fresh = threshold_run(tempfile::tempdir().unwrap().path());
        let all = fresh
            .provenance_get_or_compute(&req, &mut ExecutionBudget::unlimited())
            .unwrap();
        assert_eq!(
            all.answer.result.provenance.misets().unwrap(),
            seen.as_slice()
        );

        let mut n = 0;
        let s = fresh
            .stream_misets(
                &ProvenanceRequest::new(only_output(&fresh), ProvenanceKind::Any),
                &mut ExecutionBudget::unlimited(),
                |_| {
                    n += 1;
                    false
                },
            )
            .unwrap();
        assert_eq!((n, s.end), (1, StreamEnd::Cancelled));
    }

    #[test]
    fn bad_requests() {
        let d = tempfile::tempdir().unwrap();
        let run = threshold_run(d.path());
        let err = run
            .provenance_get_or_compute(
                &ProvenanceRequest::new("nope", ProvenanceKind::Int),
                &mut ExecutionBudget::unlimited(),
            )
            .unwrap_err();
        assert!(err.to_string().starts_with("unknown record"), "{err}");
        assert!(err.is_user_error());
        let mut req = ProvenanceRequest::new(only_output(&run), ProvenanceKind::Int);
        req.k = Some(2);
        assert!(matches!(req.validate(), Err(StoreError::InvalidRequest(_))));
        assert!(matches!(
            TraceStore::new(d.path()).open("zzz"),
            Err(StoreError::UnknownRun(_))
        ));
        let digest = run
            .node_run("th")
            .unwrap()
            .output
            .iter()
            .next()
            .unwrap()
            .digest()
            .to_hex();
        assert!(run.resolve("th", &digest[..10]).is_ok());
        assert_eq!(TraceStore::new(d.path()).list_runs().unwrap().len(), 1);
    }
}
