use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use prober_core::engine::{Provenance, ProvenanceKind};
use prober_core::harness::{
    check_matrix, generate_synthetic_run, threshold_family, SyntheticRunSpec, Template,
};
use prober_core::infer::{infer_properties, DEFAULT_TRIALS};
use prober_core::model::{ExecutionBudget, Executor, RecordSet};
use prober_core::service::{self, DEFAULT_ADDR, DEFAULT_BUDGET};
use prober_core::store::config::PipelineConfig;
use prober_core::store::{run_pipeline, ProvenanceRequest, StoreError, TraceError, TraceStore};

/// Provenance for pipelines of black-box operators.
#[derive(Parser)]
#[command(name = "prober", version)]
struct Cli {
    /// Print JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Store root (default: $PROBER_DATA_DIR, else ./prober-data).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a pipeline and store its trace.
    Run {
        config: PathBuf,
        /// JSON Lines input files, one per source port.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Run id (default: derived from config and inputs).
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Provenance of one output record of a stored run.
    Trace {
        run: String,
        /// Record id, or a digest prefix of at least 8 hex digits.
        record: String,
        #[arg(long)]
        kind: ProvenanceKind,
        /// Node holding the record (default: the sink).
        #[arg(long)]
        node: Option<String>,
        /// Number of MISets for --kind any.
        #[arg(long)]
        k: Option<usize>,
        /// Largest MISet size for --kind all.
        #[arg(long)]
        bound: Option<usize>,
        /// Execution limit.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        /// Trace back to the pipeline input through every upstream node.
        #[arg(long)]
        chain: bool,
    },
    /// Classify a node's operator by sampling its recorded input.
    InferProps {
        #[arg(long)]
        run: String,
        /// Node id.
        #[arg(long)]
        op: String,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Compare the engine with exhaustive ground truth on the built-in matrix.
    Oracle,
    /// Coverage metrics on the threshold family.
    Bench {
        #[arg(long, default_value_t = 3)]
        min_t: usize,
        #[arg(long, default_value_t = 5)]
        max_t: usize,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = DEFAULT_ADDR)]
        addr: SocketAddr,
    },
    /// Write a synthetic pipeline config and input.
    Synth {
        /// address-chain or business.
        #[arg(long, default_value = "address-chain")]
        template: String,
        #[arg(long, default_value_t = 4)]
        docs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    User(String),
    Engine(String),
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        if e.is_user_error() {
            Failure::User(e.to_string())
        } else {
            Failure::Engine(e.to_string())
        }
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Run(_) => Failure::Engine(e.to_string()),
            _ => Failure::User(e.to_string()),
        }
    }
}

fn user(msg: impl std::fmt::Display) -> Failure {
    Failure::User(msg.to_string())
}

fn print_json(v: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("output serializes")
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let store = cli
        .data_dir
        .clone()
        .map_or_else(TraceStore::from_env, TraceStore::new);
    match dispatch(cli, &store) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Engine(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli, store: &TraceStore) -> Result<(), Failure> {
    let json = cli.json;
    match cli.cmd {
        Cmd::Run {
            config,
            inputs,
            id,
            budget,
        } => run(store, &config, &inputs, id.as_deref(), budget, json),
        Cmd::Trace {
            run,
            record,
            kind,
            node,
            k,
            bound,
            budget,
            chain,
        } => {
            let req = ProvenanceRequest {
                node,
                record,
                kind,
                k,
                bound,
                chain,
                budget: Some(budget),
            };
            trace(store, &run, &req, json)
        }
        Cmd::InferProps {
            run,
            op,
            trials,
            seed,
            budget,
        } => infer(store, &run, &op, trials, seed, budget, json),
        Cmd::Oracle => oracle(json),
        Cmd::Bench { min_t, max_t } => bench(min_t, max_t, json),
        Cmd::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Engine(e.to_string()))?;
            eprintln!("serving {} on http://{addr}", store.root().display());
            rt.block_on(service::serve(store.clone(), addr))
                .map_err(|e| user(format!("{addr}: {e}")))
        }
        Cmd::Synth {
            template,
            docs,
            seed,
            out,
        } => synth(&template, docs, seed, &out, json),
    }
}

fn run(
    store: &TraceStore,
    config_path: &Path,
    inputs: &[PathBuf],
    id: Option<&str>,
    budget: Option<u64>,
    json: bool,
) -> Result<(), Failure> {
    let config = PipelineConfig::load(config_path).map_err(user)?;
    let mut source = RecordSet::new();
    for (port, path) in inputs.iter().enumerate() {
        let text =
            std::fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
        let set = RecordSet::parse_jsonl(&text, port as u16)
            .map_err(|e| user(format!("{}: {e}", path.display())))?;
        for r in set.iter() {
            source.insert(r.clone());
        }
    }
    let mut b = budget.map_or_else(ExecutionBudget::unlimited, ExecutionBudget::with_limit);
    let (trace, _) = run_pipeline(
        &config,
        config_path.parent(),
        &source,
        &Executor::new(),
        &mut b,
        id,
        None,
    )?;
    let dir = store.save(&trace)?;
    if json {
        let nodes: serde_json::Map<_, _> = trace
            .config
            .nodes
            .iter()
            .map(|n| (n.id.clone(), json!(trace.nodes[&n.id].output.len())))
            .collect();
        print_json(&json!({
            "runId": trace.run_id,
            "dir": dir,
            "executions": trace.totals.executions,
            "outputs": nodes,
        }));
    } else {
        println!("run {} stored in {}", trace.run_id, dir.display());
        for n in &trace.config.nodes {
            println!("  {:<12} {} records", n.id, trace.nodes[&n.id].output.len());
        }
    }
    Ok(())
}

fn trace(
    store: &TraceStore,
    run_id: &str,
    req: &ProvenanceRequest,
    json: bool,
) -> Result<(), Failure> {
    let run = store.open(run_id)?;
    let mut budget = ExecutionBudget::with_limit(req.budget.unwrap_or(DEFAULT_BUDGET));
    let served = run.provenance_get_or_compute(req, &mut budget)?;
    if json {
        println!("{}", served.json);
        return Ok(());
    }
    let a = &served.answer;
    let describe = |ids: &prober_core::engine::IdSet| -> Result<String, StoreError> {
        let members = run.members(&a.node, a.chain, ids)?;
        Ok(members
            .iter()
            .map(|r| format!("{} {}", r.id, r.value))
            .collect::<Vec<_>>()
            .join(", "))
    };
    println!(
        "{} provenance of {} at {}{}: {:?}, via {:?}, {} executions{}",
        a.result.provenance.kind(),
        a.record,
        a.node,
        if a.chain {
            " (traced to the pipeline input)"
        } else {
            ""
        },
        a.result.relation,
        a.method,
        a.budget_spent.executions,
        if served.cache_hit { ", cached" } else { "" }
    );
    match &a.result.provenance {
        Provenance::All { misets, exhausted }
        | Provenance::Any {
            misets, exhausted, ..
        } => {
            for (i, m) in misets.iter().enumerate() {
                println!("  MISet {}: {}", i + 1, describe(m)?);
            }
            if !exhausted {
                println!("  (more MISets may exist)");
            }
        }
        Provenance::Uni { records, .. } | Provenance::Int { records, .. } => {
            if records.is_empty() {
                println!("  (empty)");
            }
            for r in run.members(&a.node, a.chain, records)?.iter() {
                println!("  {} {}", r.id, r.value);
            }
        }
        Provenance::Imp { counts, .. } => {
            for e in counts {
                println!("  {:>5}  {}", e.count, e.record);
            }
        }
    }
    if a.truncated {
        println!("  budget exhausted before the answer was complete");
    }
    Ok(())
}

fn infer(
    store: &TraceStore,
    run_id: &str,
    node: &str,
    trials: u32,
    seed: u64,
    budget: Option<u64>,
    json: bool,
) -> Result<(), Failure> {
    let run = store.open(run_id)?;
    let op = &run
        .graph()
        .node(node)
        .ok_or_else(|| user(format!("unknown node `{node}`")))?
        .op;
    let pool = &run.node_run(node)?.input;
    let mut b = budget.map_or_else(ExecutionBudget::unlimited, ExecutionBudget::with_limit);
    let report = infer_properties(run.executor(), op, pool, trials, seed, &mut b).map_err(user)?;
    if json {
        print_json(&report);
    } else {
        println!(
            "{node}: {} ({:?})",
            report.class.shape(),
            report.class.monotone()
        );
        println!(
            "  monotonicity {:?} over {} trials, additivity {:?} over {} trials",
            report.monotonicity.verdict,
            report.monotonicity.trials,
            report.additivity.verdict,
            report.additivity.trials
        );
        if let Some(cx) = &report.monotonicity.counterexample {
            println!(
                "  counterexample: {}",
                serde_json::to_string(cx).expect("serializes")
            );
        }
    }
    Ok(())
}

fn oracle(json: bool) -> Result<(), Failure> {
    let checks = check_matrix().map_err(|e| Failure::Engine(e.to_string()))?;
    let bad: Vec<_> = checks.iter().filter(|c| c.mismatch.is_some()).collect();
    if json {
        print_json(
            &json!({ "instances": checks.len(), "agree": bad.is_empty(), "checks": checks }),
        );
    } else {
        for c in &bad {
            println!(
                "MISMATCH {}: {}",
                c.name,
                c.mismatch.as_deref().unwrap_or_default()
            );
        }
        if bad.is_empty() {
            println!("all instances agree ({} instances)", checks.len());
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Engine(format!(
            "{} of {} instances disagree",
            bad.len(),
            checks.len()
        )))
    }
}

fn bench(min_t: usize, max_t: usize, json: bool) -> Result<(), Failure> {
    if min_t == 0 || min_t > max_t {
        return Err(user("need 1 <= min-t <= max-t"));
    }
    let rows =
        threshold_family(min_t..=max_t, &[1, 3, 5]).map_err(|e| Failure::Engine(e.to_string()))?;
    if json {
        print_json(&rows);
        return Ok(());
    }
    println!("  T   N  |P_all|  int   any-1  any-3  any-5  executions  ms");
    for r in &rows {
        let c = &r.metrics.coverage;
        println!(
            "{:>3} {:>3} {:>8} {:>5.2} {:>6.2} {:>6.2} {:>6.2} {:>11} {:>5.1}",
            r.t,
            r.n,
            r.metrics.sizes["all"],
            c["int"],
            c["any-1"],
            c["any-3"],
            c["any-5"],
            r.executions,
            r.elapsed.as_secs_f64() * 1000.0
        );
    }
    Ok(())
}

fn synth(template: &str, docs: usize, seed: u64, out: &Path, json: bool) -> Result<(), Failure> {
    let template: Template =
        serde_json::from_value(json!(template.replace('-', "_"))).map_err(|_| {
            user(format!(
                "unknown template `{template}` (expected address-chain or business)"
            ))
        })?;
    let s = generate_synthetic_run(&SyntheticRunSpec::new(template, docs, seed));
    let write = |name: &str, text: String| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| user(format!("{}: {e}", p.display())))
    };
    std::fs::create_dir_all(out).map_err(|e| user(format!("{}: {e}", out.display())))?;
    write("config.json", s.config.canonical_json())?;
    write("inputs.jsonl", s.inputs.to_jsonl())?;
    write(
        "truth.json",
        serde_json::to_string_pretty(&s.truth).expect("truth serializes"),
    )?;
    if json {
        print_json(&json!({ "dir": out, "records": s.inputs.len() }));
    } else {
        println!(
            "wrote config.json, inputs.jsonl and truth.json to {}",
            out.display()
        );
    }
    Ok(())
}
