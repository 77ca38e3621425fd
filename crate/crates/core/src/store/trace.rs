//! Run traces: what every node produced during one pipeline run, persisted
//! as a directory of JSON and JSON Lines files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::config::{ConfigError, PipelineConfig};
use super::run::{execute_pipeline, NodeRun, RunError};
use crate::model::{ExecutionBudget, Executor, PipelineGraph, RecordSet};

pub const TRACE_FORMAT: u32 = 1;
const MANIFEST: &str = "trace.json";
const CONFIG: &str = "config.json";
const BUDGETS: &str = "budgets.json";

/// Why a stored trace cannot be trusted.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Corruption {
    #[error("missing file {0}")]
    Missing(String),
    #[error("malformed {file}: {message}")]
    Malformed { file: String, message: String },
    #[error("content hash of {0} does not match the manifest")]
    HashMismatch(String),
    #[error("config drift: config hash {found} differs from the recorded {expected}")]
    ConfigDrift { expected: String, found: String },
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("corrupt trace at {path}: {corruption}")]
    CorruptTrace {
        path: PathBuf,
        corruption: Corruption,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("node id `{0}` cannot be used as a file name")]
    BadNodeId(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSnapshot {
    pub output: RecordSet,
    pub budget: ExecutionBudget,
}

/// One completed pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub run_id: String,
    pub config: PipelineConfig,
    pub config_hash: String,
    /// Port-tagged input of the source node.
    pub source_input: RecordSet,
    pub nodes: BTreeMap<String, NodeSnapshot>,
    pub totals: ExecutionBudget,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

/// Same config and input, same id.
pub fn derive_run_id(config_hash: &str, input: &RecordSet) -> String {
    let mut h = Sha256::new();
    h.update(config_hash.as_bytes());
    h.update(input.content_digest().0);
    format!("r{}", &hex::encode(h.finalize())[..12])
}

fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunTrace {
    /// The flattened input `node` saw: the source input, or each
    /// predecessor's output tagged with its edge's port.
    pub fn node_input(&self, node: &str) -> RecordSet {
        let preds: Vec<_> = self.config.edges.iter().filter(|e| e.to == node).collect();
        if preds.is_empty() {
            return self.source_input.clone();
        }
        let mut input = RecordSet::new();
        for e in preds {
            if let Some(snap) = self.nodes.get(&e.from) {
                for r in snap.output.iter() {
                    input.insert(r.with_port(e.port));
                }
            }
        }
        input
    }

    /// Node runs in the shape execution produces them.
    pub fn node_runs(&self) -> BTreeMap<String, NodeRun> {
        self.nodes
            .iter()
            .map(|(id, snap)| {
                (
                    id.clone(),
                    NodeRun {
                        input: self.node_input(id),
                        output: snap.output.clone(),
                        budget: snap.budget.clone(),
                    },
                )
            })
            .collect()
    }

    /// The node without successors.
    pub fn sink(&self) -> Option<&str> {
        self.config
            .nodes
            .iter()
            .map(|n| n.id.as_str())
            .find(|id| !self.config.edges.iter().any(|e| e.from == *id))
    }
}

/// Executes `config` on `source_input` and records every node's output.
/// `created_at` defaults to the current time; `run_id` to [`derive_run_id`].
pub fn run_pipeline(
    config: &PipelineConfig,
    base_dir: Option<&Path>,
    source_input: &RecordSet,
    exec: &Executor,
    budget: &mut ExecutionBudget,
    run_id: Option<&str>,
    created_at: Option<u64>,
) -> Result<(RunTrace, PipelineGraph), TraceError> {
    let mut config = config.clone();
    config.inline_witness_files(base_dir)?;
    let graph = config.build_graph(base_dir)?;
    let start = budget.snapshot();
    let runs = execute_pipeline(&graph, source_input, exec, budget, None)?;
    let config_hash = config.hash();
    let trace = RunTrace {
        run_id: run_id.map_or_else(|| derive_run_id(&config_hash, source_input), str::to_string),
        config_hash,
        config,
        source_input: source_input.clone(),
        nodes: runs
            .into_iter()
            .map(|(id, r)| {
                (
                    id,
                    NodeSnapshot {
                        output: r.output,
                        budget: r.budget,
                    },
                )
            })
            .collect(),
        totals: budget.since(&start),
        created_at: created_at.unwrap_or_else(now),
    };
    Ok((trace, graph))
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    run_id: String,
    config_hash: String,
    created_at: u64,
    source_ports: Vec<u16>,
    nodes: Vec<String>,
    /// Relative path to SHA-256 of its content.
    files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Budgets {
    nodes: BTreeMap<String, ExecutionBudget>,
    total: ExecutionBudget,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn safe_name(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn input_file(port: u16) -> String {
    format!("input/port{port}.jsonl")
}

fn output_file(node: &str) -> String {
    format!("outputs/{node}.jsonl")
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

/// Writes `trace` into `dir` (created if needed). The manifest goes last.
pub fn persist_trace(trace: &RunTrace, dir: &Path) -> Result<(), TraceError> {
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    files.insert(CONFIG.into(), trace.config.canonical_json().into_bytes());
    let mut ports: BTreeMap<u16, RecordSet> = BTreeMap::new();
    for r in trace.source_input.iter() {
        ports.entry(r.id.port).or_default().insert(r.clone());
    }
    if ports.is_empty() {
        ports.insert(0, RecordSet::new());
    }
    for (port, set) in &ports {
        files.insert(input_file(*port), set.to_jsonl().into_bytes());
    }
    let mut order = Vec::new();
    for n in &trace.config.nodes {
        let Some(snap) = trace.nodes.get(&n.id) else {
            continue;
        };
        if !safe_name(&n.id) {
            return Err(TraceError::BadNodeId(n.id.clone()));
        }
        files.insert(output_file(&n.id), snap.output.to_jsonl().into_bytes());
        order.push(n.id.clone());
    }
    let budgets = Budgets {
        nodes: trace
            .nodes
            .iter()
            .map(|(k, v)| (k.clone(), v.budget.clone()))
            .collect(),
        total: trace.totals.clone(),
    };
    files.insert(
        BUDGETS.into(),
        serde_json::to_vec_pretty(&budgets).expect("budgets serialize"),
    );

    let io = |path: PathBuf| move |source| TraceError::Io { path, source };
    for (rel, bytes) in &files {
        let path = dir.join(rel);
        write_atomic(&path, bytes).map_err(io(path.clone()))?;
    }
    let manifest = Manifest {
        format: TRACE_FORMAT,
        run_id: trace.run_id.clone(),
        config_hash: trace.config_hash.clone(),
        created_at: trace.created_at,
        source_ports: ports.keys().copied().collect(),
        nodes: order,
        files: files.iter().map(|(k, v)| (k.clone(), sha_hex(v))).collect(),
    };
    let path = dir.join(MANIFEST);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(&path, &bytes).map_err(io(path.clone()))
}

/// Reads a trace written by [`persist_trace`], checking every file against
/// the manifest.
pub fn load_trace(dir: &Path) -> Result<RunTrace, TraceError> {
    let corrupt = |corruption| TraceError::CorruptTrace {
        path: dir.to_path_buf(),
        corruption,
    };
    let read = |rel: &str| {
        std::fs::read(dir.join(rel)).map_err(|_| corrupt(Corruption::Missing(rel.into())))
    };
    let malformed = |file: &str, message: String| {
        corrupt(Corruption::Malformed {
            file: file.into(),
            message,
        })
    };

    let manifest: Manifest =
        serde_json::from_slice(&read(MANIFEST)?).map_err(|e| malformed(MANIFEST, e.to_string()))?;
    if manifest.format != TRACE_FORMAT {
        return Err(malformed(
            MANIFEST,
            format!("unsupported format {}", manifest.format),
        ));
    }
    let mut contents: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for (rel, hash) in &manifest.files {
        if rel.contains("..") || Path::new(rel).is_absolute() {
            return Err(malformed(MANIFEST, format!("bad path {rel}")));
        }
        let bytes = read(rel)?;
        if rel != CONFIG && sha_hex(&bytes) != *hash {
            return Err(corrupt(Corruption::HashMismatch(rel.clone())));
        }
        contents.insert(rel.as_str(), bytes);
    }
    let file = |rel: &str| -> Result<&Vec<u8>, TraceError> {
        contents
            .get(rel)
            .ok_or_else(|| corrupt(Corruption::Missing(rel.into())))
    };

    let config_text =
        String::from_utf8(file(CONFIG)?.clone()).map_err(|e| malformed(CONFIG, e.to_string()))?;
    let config =
        PipelineConfig::parse(&config_text).map_err(|e| malformed(CONFIG, e.to_string()))?;
    let found = config.hash();
    if found != manifest.config_hash {
        return Err(corrupt(Corruption::ConfigDrift {
            expected: manifest.config_hash,
            found,
        }));
    }
    if sha_hex(file(CONFIG)?) != manifest.files[CONFIG] {
        return Err(corrupt(Corruption::HashMismatch(CONFIG.into())));
    }

    let jsonl = |rel: &str, port: u16| -> Result<RecordSet, TraceError> {
        let text = std::str::from_utf8(file(rel)?).map_err(|e| malformed(rel, e.to_string()))?;
        RecordSet::parse_jsonl(text, port).map_err(|e| malformed(rel, e.to_string()))
    };
    let mut source_input = RecordSet::new();
    for port in &manifest.source_ports {
        for r in jsonl(&input_file(*port), *port)?.iter() {
            source_input.insert(r.clone());
        }
    }
    let budgets: Budgets =
        serde_json::from_slice(file(BUDGETS)?).map_err(|e| malformed(BUDGETS, e.to_string()))?;
    let mut nodes = BTreeMap::new();
    for id in &manifest.nodes {
        let budget = budgets
            .nodes
            .get(id)
            .cloned()
            .ok_or_else(|| malformed(BUDGETS, format!("no entry for node {id}")))?;
        nodes.insert(
            id.clone(),
            NodeSnapshot {
                output: jsonl(&output_file(id), 0)?,
                budget,
            },
        );
    }
    Ok(RunTrace {
        run_id: manifest.run_id,
        config,
        config_hash: manifest.config_hash,
        source_input,
        nodes,
        totals: budgets.total,
        created_at: manifest.created_at,
    })
}
