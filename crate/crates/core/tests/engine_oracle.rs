use std::collections::BTreeSet;

use prober_core::engine::{IdSet, Provenance, ProvenanceQuery};
use prober_core::harness::{
    brute_force_pall, instance_matrix, oracle_impact, oracle_intersection, oracle_union,
    SyntheticOpSpec,
};
use prober_core::model::{ExecutionBudget, Executor, Record, RecordSet};
use proptest::prelude::*;

fn sorted(v: &[IdSet]) -> Vec<IdSet> {
    let mut v = v.to_vec();
    v.sort();
    v
}

#[test]
fn matrix_enumeration_matches_oracle() {
    let matrix = instance_matrix();
    for inst in &matrix {
        let op = inst.spec.build(&inst.name);
        let truth = brute_force_pall(&op, &inst.input, &inst.target, 12).unwrap();
        let exec = Executor::new();
        let q = ProvenanceQuery::new(&exec, &op, &inst.input, &inst.target);
        let mut b = ExecutionBudget::unlimited();
        let run = q.enumerate_misets(None, &mut b).unwrap();
        assert_eq!(sorted(&run.id_sets()), truth, "{}", inst.name);

        let int = q.compute_p_int(&mut ExecutionBudget::unlimited()).unwrap();
        assert_eq!(
            int.provenance,
            Provenance::Int {
                records: oracle_intersection(&truth),
                exact: true
            },
            "{}",
            inst.name
        );
        let uni = q.compute_p_uni(&mut ExecutionBudget::unlimited()).unwrap();
        assert_eq!(
            uni.provenance,
            Provenance::Uni {
                records: oracle_union(&truth),
                exact: true
            },
            "{}",
            inst.name
        );
        let Provenance::Imp { counts, exact } = q
            .compute_p_imp(&mut ExecutionBudget::unlimited())
            .unwrap()
            .provenance
        else {
            unreachable!()
        };
        assert!(exact);
        let got: Vec<_> = counts.into_iter().map(|e| (e.record, e.count)).collect();
        assert_eq!(got, oracle_impact(&truth), "{}", inst.name);
    }
}

#[test]
fn returned_misets_pass_the_check_and_form_an_antichain() {
    for inst in instance_matrix() {
        let op = inst.spec.build(&inst.name);
        let exec = Executor::new();
        let q = ProvenanceQuery::new(&exec, &op, &inst.input, &inst.target);
        let mut b = ExecutionBudget::unlimited();
        let run = q.enumerate_misets(None, &mut b).unwrap();
        let sets = run.id_sets();
        for (i, m) in run.misets.iter().enumerate() {
            assert!(q.is_miset(m.members(), &mut b).unwrap(), "{}", inst.name);
            for (j, other) in sets.iter().enumerate() {
                if i != j {
                    assert!(!sets[i].is_subset(other), "{}", inst.name);
                }
            }
        }
        let int = oracle_intersection(&sets);
        let uni = oracle_union(&sets);
        for m in &sets {
            assert!(int.is_subset(m) && m.is_subset(&uni));
        }
    }
}

#[test]
fn budget_contracts_on_fresh_caches() {
    for inst in instance_matrix() {
        let op = inst.spec.build(&inst.name);
        let n = inst.input.len() as u64;

        let exec = Executor::new();
        let mut b = ExecutionBudget::unlimited();
        ProvenanceQuery::new(&exec, &op, &inst.input, &inst.target)
            .find_any_miset(&mut b)
            .unwrap();
        assert!(b.executions <= n + 1, "{}: {}", inst.name, b.executions);

        let exec = Executor::new();
        let mut b = ExecutionBudget::unlimited();
        ProvenanceQuery::new(&exec, &op, &inst.input, &inst.target)
            .is_unique_miset(&mut b)
            .unwrap();
        assert!(b.executions <= 2 * n + 1, "{}", inst.name);

        let exec = Executor::new();
        let mut b = ExecutionBudget::unlimited();
        ProvenanceQuery::new(&exec, &op, &inst.input, &inst.target)
            .compute_p_int(&mut b)
            .unwrap();
        assert!(b.executions <= n + 1, "{}", inst.name);
    }
}

fn threshold_input(n: usize, noise: usize) -> RecordSet {
    let mut set: RecordSet = (0..n)
        .map(|i| Record::text(0, format!("s{i:02}"), "s"))
        .collect();
    for i in 0..noise {
        set.insert(Record::text(0, format!("n{i:02}"), format!("n{}", i % 2)));
    }
    set
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn k_prefix_matches_unbounded_stream(n in 2usize..7, t in 1usize..4, k in 1usize..5) {
        prop_assume!(t <= n);
        let op = SyntheticOpSpec::SupportThreshold { t, key: None }.build("th");
        let input = threshold_input(n, 1);
        let target = Record::text(0, "?", "s");
        let exec = Executor::new();
        let q = ProvenanceQuery::new(&exec, &op, &input, &target);
        let full = q.enumerate_misets(None, &mut ExecutionBudget::unlimited()).unwrap().id_sets();
        let capped = q.enumerate_misets(Some(k), &mut ExecutionBudget::unlimited()).unwrap().id_sets();
        prop_assert_eq!(&full[..k.min(full.len())], &capped[..]);
        let distinct: BTreeSet<_> = full.iter().cloned().collect();
        prop_assert_eq!(distinct.len(), full.len());
    }

    #[test]
    fn term_support_matches_oracle(docs in proptest::collection::vec(
        proptest::collection::btree_set(0u8..5, 1..3), 1..8), t in 1usize..4)
    {
        let input: RecordSet = docs
            .iter()
            .enumerate()
            .map(|(i, terms)| {
                let words: Vec<String> = terms.iter().map(|w| format!("w{w}")).collect();
                Record::text(0, format!("d{i}"), words.join(" "))
            })
            .collect();
        let spec = SyntheticOpSpec::TermSupport { t };
        let op = spec.build("terms");
        let out = spec.eval(std::slice::from_ref(&input));
        for target in out.iter() {
            let truth = brute_force_pall(&op, &input, target, 12).unwrap();
            let exec = Executor::new();
            let q = ProvenanceQuery::new(&exec, &op, &input, target);
            let got = q.enumerate_misets(None, &mut ExecutionBudget::unlimited()).unwrap();
            prop_assert_eq!(sorted(&got.id_sets()), truth);
        }
    }
}
