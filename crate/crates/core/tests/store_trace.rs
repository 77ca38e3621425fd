use std::path::{Path, PathBuf};

use prober_core::engine::{IdSet, Provenance, ProvenanceKind};
use prober_core::harness::{
    brute_force_pall, generate_synthetic_run, oracle_intersection, SyntheticRunSpec, Template,
};
use prober_core::model::{ExecutionBudget, Executor};
use prober_core::store::{
    load_trace, persist_trace, run_pipeline, Corruption, Method, ProvenanceRequest, RunTrace,
    TraceError, TraceStore,
};

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata/v1/address-chain-r1")
}

fn golden_trace() -> RunTrace {
    let s = generate_synthetic_run(&SyntheticRunSpec::new(Template::AddressChain, 4, 1));
    run_pipeline(
        &s.config,
        None,
        &s.inputs,
        &Executor::new(),
        &mut ExecutionBudget::unlimited(),
        Some("r1"),
        Some(0),
    )
    .unwrap()
    .0
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for sub in ["", "input", "outputs"] {
        for e in std::fs::read_dir(dir.join(sub)).unwrap().flatten() {
            if e.path().is_file() {
                out.push(e.path().strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn address_chain_matches_golden_trace() {
    let fresh = tempfile::tempdir().unwrap();
    persist_trace(&golden_trace(), fresh.path()).unwrap();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        persist_trace(&golden_trace(), &golden_dir()).unwrap();
    }
    let golden = golden_dir();
    assert_eq!(files(fresh.path()), files(&golden));
    for f in files(&golden) {
        assert_eq!(
            std::fs::read(fresh.path().join(&f)).unwrap(),
            std::fs::read(golden.join(&f)).unwrap(),
            "{}",
            f.display()
        );
    }
    assert_eq!(load_trace(&golden).unwrap(), golden_trace());
}

#[test]
fn rerunning_reproduces_the_trace() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    persist_trace(&golden_trace(), a.path()).unwrap();
    persist_trace(&golden_trace(), b.path()).unwrap();
    for f in files(a.path()) {
        assert_eq!(
            std::fs::read(a.path().join(&f)).unwrap(),
            std::fs::read(b.path().join(&f)).unwrap()
        );
    }
}

#[test]
fn truncated_manifest_is_corrupt() {
    let d = tempfile::tempdir().unwrap();
    persist_trace(&golden_trace(), d.path()).unwrap();
    let m = d.path().join("trace.json");
    let text = std::fs::read(&m).unwrap();
    std::fs::write(&m, &text[..text.len() - 20]).unwrap();
    assert!(matches!(
        load_trace(d.path()),
        Err(TraceError::CorruptTrace { .. })
    ));
}

#[test]
fn edited_config_is_drift() {
    let d = tempfile::tempdir().unwrap();
    persist_trace(&golden_trace(), d.path()).unwrap();
    let c = d.path().join("config.json");
    let text = std::fs::read_to_string(&c).unwrap();
    std::fs::write(&c, text.replace("\"addr\"", "\"phone\"")).unwrap();
    let err = load_trace(d.path()).unwrap_err();
    assert!(
        matches!(
            err,
            TraceError::CorruptTrace {
                corruption: Corruption::ConfigDrift { .. },
                ..
            }
        ),
        "{err}"
    );
}

fn threshold_store(root: &Path) -> TraceStore {
    let config = prober_core::store::config::PipelineConfig::parse(
        r#"{"nodes":[{"id":"th","kind":"support_threshold","params":{"t":2}}]}"#,
    )
    .unwrap();
    let input = prober_core::model::RecordSet::parse_jsonl(
        "{\"id\":\"a\",\"value\":\"s\"}\n{\"id\":\"b\",\"value\":\"s\"}\n{\"id\":\"c\",\"value\":\"s\"}\n",
        0,
    )
    .unwrap();
    let store = TraceStore::new(root);
    let (t, _) = run_pipeline(
        &config,
        None,
        &input,
        &Executor::new(),
        &mut ExecutionBudget::unlimited(),
        Some("t2"),
        Some(0),
    )
    .unwrap();
    store.save(&t).unwrap();
    store
}

#[test]
fn int_on_threshold_node_equals_oracle_and_is_cached() {
    let d = tempfile::tempdir().unwrap();
    let store = threshold_store(d.path());
    let run = store.open("t2").unwrap();
    let target = run
        .node_run("th")
        .unwrap()
        .output
        .iter()
        .next()
        .unwrap()
        .clone();
    let req = ProvenanceRequest::new(target.id.local.clone(), ProvenanceKind::Int);
    let a = run
        .provenance_get_or_compute(&req, &mut ExecutionBudget::unlimited())
        .unwrap();
    let truth = brute_force_pall(
        &run.graph().node("th").unwrap().op,
        &run.node_run("th").unwrap().input,
        &target,
        12,
    )
    .unwrap();
    assert_eq!(
        a.answer.result.provenance,
        Provenance::Int {
            records: oracle_intersection(&truth),
            exact: true
        }
    );
    assert!(a.answer.budget_spent.executions <= 4);

    let reopened = store.open("t2").unwrap();
    let before = reopened.executor().real_executions();
    let b = reopened
        .provenance_get_or_compute(&req, &mut ExecutionBudget::unlimited())
        .unwrap();
    assert!(b.cache_hit);
    assert_eq!(b.json, a.json);
    assert_eq!(reopened.executor().real_executions(), before);
}

#[test]
fn any_three_of_a_unique_record() {
    let d = tempfile::tempdir().unwrap();
    persist_trace(&golden_trace(), &d.path().join("runs/r1")).unwrap();
    let run = TraceStore::new(d.path()).open("r1").unwrap();
    let mut req = ProvenanceRequest::new("d1/s0", ProvenanceKind::Any);
    req.k = Some(3);
    let a = run
        .provenance_get_or_compute(&req, &mut ExecutionBudget::unlimited())
        .unwrap()
        .answer;
    assert_eq!(a.method, Method::DirectScan);
    let Provenance::Any {
        misets, exhausted, ..
    } = a.result.provenance
    else {
        panic!()
    };
    assert_eq!(misets.len(), 1);
    assert!(exhausted);

    req.chain = true;
    let a = run
        .provenance_get_or_compute(&req, &mut ExecutionBudget::unlimited())
        .unwrap()
        .answer;
    let doc: IdSet = [prober_core::model::RecordId::new(0, "d1")]
        .into_iter()
        .collect();
    assert_eq!(a.result.provenance.misets().unwrap(), &[doc]);
    assert!(d.path().join("runs/r1/provenance/stored.json").exists());
}

#[test]
fn concurrent_readers_share_a_run() {
    let d = tempfile::tempdir().unwrap();
    persist_trace(&golden_trace(), &d.path().join("runs/r1")).unwrap();
    let run = std::sync::Arc::new(TraceStore::new(d.path()).open("r1").unwrap());
    let outs: Vec<String> = run
        .node_run("ad")
        .unwrap()
        .output
        .ids()
        .map(|i| i.local.clone())
        .collect();
    let handles: Vec<_> = outs
        .into_iter()
        .map(|id| {
            let run = run.clone();
            std::thread::spawn(move || {
                let mut req = ProvenanceRequest::new(id, ProvenanceKind::All);
                req.chain = true;
                run.provenance_get_or_compute(&req, &mut ExecutionBudget::unlimited())
                    .unwrap()
                    .answer
            })
        })
        .collect();
    for h in handles {
        let a = h.join().unwrap();
        assert_eq!(a.result.provenance.misets().unwrap().len(), 1);
    }
}
