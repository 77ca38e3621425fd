use std::collections::BTreeMap;
use std::sync::Arc;

use prober_core::compose::{Composer, Relation, StoredProvenance};
use prober_core::engine::{IdSet, Provenance, ProvenanceKind, ProvenanceQuery};
use prober_core::harness::{
    brute_force_pall, chain_cases, generate_synthetic_run, oracle_intersection, oracle_union,
    ChainCase, SyntheticRunSpec, Template,
};
use prober_core::model::{ExecutionBudget, Executor, PipelineGraph, Record, RecordId, RecordSet};
use prober_core::store::{chain_operator, execute_pipeline, NodeRun};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(g: &PipelineGraph, input: &RecordSet, exec: &Executor) -> BTreeMap<String, NodeRun> {
    execute_pipeline(g, input, exec, &mut ExecutionBudget::unlimited(), None).unwrap()
}

fn targets(runs: &BTreeMap<String, NodeRun>, node: &str) -> Vec<Record> {
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for r in runs[node].output.iter() {
        if !seen.contains(&r.digest()) {
            seen.push(r.digest());
            out.push(r.clone());
        }
    }
    out
}

fn subsets(input: &RecordSet, rng: &mut ChaCha8Rng) -> Vec<RecordSet> {
    let recs: Vec<&Record> = input.iter().collect();
    let n = recs.len();
    if n <= 6 {
        (0u32..1 << n)
            .map(|mask| {
                recs.iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, r)| (*r).clone())
                    .collect()
            })
            .collect()
    } else {
        (0..1000)
            .map(|_| {
                recs.iter()
                    .filter(|_| rng.random_bool(0.5))
                    .map(|r| (*r).clone())
                    .collect()
            })
            .collect()
    }
}

#[test]
fn simulation_matches_direct_chain_execution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in chain_cases() {
        for declared in [false, true] {
            let g = case.graph(declared);
            let exec = Executor::new();
            let runs = run(&g, &case.input, &exec);
            let direct = chain_operator(&g, "o2").unwrap();
            let mut c = Composer::new(&g, &runs, &exec, Arc::new(StoredProvenance::new())).unwrap();
            for target in targets(&runs, "o2") {
                let focus = c.focus_of("o2", &target).unwrap();
                let sim = c
                    .simulate("o2", &focus, &mut ExecutionBudget::unlimited())
                    .unwrap();
                let before = exec.real_executions();
                for subset in subsets(&case.input, &mut rng) {
                    let expected = direct
                        .apply_raw(std::slice::from_ref(&subset))
                        .unwrap()
                        .contains_by_value(&target);
                    assert_eq!(
                        sim.member(&subset.id_set()).unwrap(),
                        expected,
                        "{} {:?}",
                        case.name,
                        subset
                    );
                }
                assert_eq!(exec.real_executions(), before, "{}", case.name);
            }
        }
    }
}

fn oracle(case: &ChainCase, target: &Record) -> Vec<IdSet> {
    let op = chain_operator(&case.graph(false), "o2").unwrap();
    brute_force_pall(&op, &case.input, target, 10).unwrap()
}

#[test]
fn shortcut_bounds_are_honest() {
    for case in chain_cases() {
        for declared in [false, true] {
            let g = case.graph(declared);
            let exec = Executor::new();
            let runs = run(&g, &case.input, &exec);
            let mut c = Composer::new(&g, &runs, &exec, Arc::new(StoredProvenance::new())).unwrap();
            for target in targets(&runs, "o2") {
                let truth = oracle(&case, &target);
                let mut b = ExecutionBudget::unlimited();
                let uni = c
                    .compose_node("o2", &target, ProvenanceKind::Uni, None, &mut b)
                    .unwrap();
                let Provenance::Uni { records, .. } = &uni.result.provenance else {
                    panic!()
                };
                match uni.result.relation {
                    Relation::Exact => assert_eq!(records, &oracle_union(&truth), "{}", case.name),
                    Relation::SupersetOfTruth => {
                        assert!(oracle_union(&truth).is_subset(records), "{}", case.name)
                    }
                    Relation::SubsetOfTruth => panic!("{}: uni labelled subset", case.name),
                }
                let int = c
                    .compose_node("o2", &target, ProvenanceKind::Int, None, &mut b)
                    .unwrap();
                let Provenance::Int { records, .. } = &int.result.provenance else {
                    panic!()
                };
                match int.result.relation {
                    Relation::Exact => {
                        assert_eq!(records, &oracle_intersection(&truth), "{}", case.name)
                    }
                    Relation::SubsetOfTruth => {
                        assert!(
                            records.is_subset(&oracle_intersection(&truth)),
                            "{}",
                            case.name
                        )
                    }
                    Relation::SupersetOfTruth => panic!("{}: int labelled superset", case.name),
                }
                let all = c
                    .compose_node("o2", &target, ProvenanceKind::All, None, &mut b)
                    .unwrap();
                assert_eq!(all.result.relation, Relation::Exact);
                let mut got = all.result.provenance.misets().unwrap().to_vec();
                got.sort();
                assert_eq!(got, truth, "{}", case.name);
                assert!(!all.unsound);
            }
        }
    }
}

#[test]
fn shortcut_rows_agree_with_the_composite() {
    let mut exact_rows = 0;
    for case in chain_cases() {
        let g = case.graph(true);
        let exec = Executor::new();
        let runs = run(&g, &case.input, &exec);
        let mut c = Composer::new(&g, &runs, &exec, Arc::new(StoredProvenance::new())).unwrap();
        for target in targets(&runs, "o2") {
            for kind in [
                ProvenanceKind::All,
                ProvenanceKind::Uni,
                ProvenanceKind::Int,
            ] {
                let mut b = ExecutionBudget::unlimited();
                let short = c.compose_node("o2", &target, kind, None, &mut b).unwrap();
                if short.result.relation != Relation::Exact {
                    continue;
                }
                exact_rows += 1;
                let op = c.compose_as_operator("o2", &target, &mut b).unwrap();
                let q = ProvenanceQuery::new(&exec, &op, &case.input, &target);
                let via = q.compute(kind, None, &mut b).unwrap().provenance;
                let norm = |p: &Provenance| match p {
                    Provenance::All { misets, .. } => {
                        let mut m = misets.clone();
                        m.sort();
                        format!("{m:?}")
                    }
                    other => format!("{other:?}"),
                };
                assert_eq!(
                    norm(&short.result.provenance),
                    norm(&via),
                    "{} {kind}",
                    case.name
                );
            }
        }
        assert!(exec.virtual_evaluations() > 0, "{}", case.name);
    }
    assert!(exact_rows > 10, "only {exact_rows} exact shortcut answers");
}

#[test]
fn address_chain_traces_back_to_documents() {
    let synth = generate_synthetic_run(&SyntheticRunSpec::new(Template::AddressChain, 4, 1));
    let g = synth.config.build_graph(None).unwrap();
    let exec = Executor::new();
    let runs = run(&g, &synth.inputs, &exec);
    let mut c = Composer::new(&g, &runs, &exec, Arc::new(StoredProvenance::new())).unwrap();
    let outputs: Vec<Record> = runs["ad"].output.iter().cloned().collect();
    assert!(!outputs.is_empty());
    for r in outputs {
        let doc = r.id.local.split('/').next().unwrap().to_string();
        let res = c
            .compose_chain(
                &["wb", "sg", "ad"],
                &r,
                ProvenanceKind::All,
                None,
                &mut ExecutionBudget::unlimited(),
            )
            .unwrap();
        assert_eq!(res.result.relation, Relation::Exact);
        let expected: IdSet = [RecordId::new(0, doc)].into_iter().collect();
        assert_eq!(res.result.provenance.misets().unwrap(), &[expected]);

        let op = c
            .compose_as_operator("ad", &r, &mut ExecutionBudget::unlimited())
            .unwrap();
        let (unique, _) = ProvenanceQuery::new(&exec, &op, &synth.inputs, &r)
            .is_unique_miset(&mut ExecutionBudget::unlimited())
            .unwrap();
        assert!(unique);
    }
}

#[test]
fn any_miset_on_composite_matches_real_chain() {
    for case in chain_cases() {
        let g = case.graph(false);
        let exec = Executor::new();
        let runs = run(&g, &case.input, &exec);
        let real = chain_operator(&g, "o2").unwrap();
        let mut c = Composer::new(&g, &runs, &exec, Arc::new(StoredProvenance::new())).unwrap();
        for target in targets(&runs, "o2") {
            let virt = c
                .compose_as_operator("o2", &target, &mut ExecutionBudget::unlimited())
                .unwrap();
            let a = ProvenanceQuery::new(&exec, &virt, &case.input, &target)
                .find_any_miset(&mut ExecutionBudget::unlimited())
                .unwrap();
            let b = ProvenanceQuery::new(&exec, &real, &case.input, &target)
                .find_any_miset(&mut ExecutionBudget::unlimited())
                .unwrap();
            assert_eq!(a.ids(), b.ids(), "{}", case.name);
        }
    }
}
