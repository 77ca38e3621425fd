//! Sampling-based classification of black-box operators.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::ProvenanceQuery;
use crate::error::EngineError;
use crate::model::{
    Digest, ExecutionBudget, Executor, Monotonicity, OperatorHandle, PropertyClass, Record,
    RecordSet, Shape, ShapeEvidence,
};

pub const DEFAULT_TRIALS: u32 = 32;
/// Largest sampled subset.
pub const MAX_SAMPLE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InferError {
    #[error("the sample pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Violated,
}

/// Concrete inputs showing a property fails, with the outputs observed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "property", rename_all = "snake_case")]
pub enum Counterexample {
    /// `smaller ⊆ larger` but some output of `smaller` is missing from the
    /// output of `larger`.
    Monotonicity {
        smaller: RecordSet,
        larger: RecordSet,
        smaller_output: RecordSet,
        larger_output: RecordSet,
    },
    /// The output of `input` differs from the union of its singletons'
    /// outputs.
    Additivity {
        input: RecordSet,
        output: RecordSet,
        singleton_outputs: Vec<RecordSet>,
    },
}

fn digests<'a>(sets: impl IntoIterator<Item = &'a RecordSet>) -> BTreeSet<Digest> {
    sets.into_iter().flat_map(|s| s.value_digests()).collect()
}

impl Counterexample {
    /// Re-applies the operator and checks that the violation still shows.
    pub fn replay(
        &self,
        exec: &Executor,
        op: &OperatorHandle,
        budget: &mut ExecutionBudget,
    ) -> Result<bool, EngineError> {
        match self {
            Counterexample::Monotonicity {
                smaller, larger, ..
            } => {
                let a = exec.apply_flat(op, smaller, budget)?;
                let b = exec.apply_flat(op, larger, budget)?;
                Ok(smaller.is_subset_of(larger) && !a.values_subset_of(&b))
            }
            Counterexample::Additivity { input, .. } => {
                let whole = exec.apply_flat(op, input, budget)?;
                let mut parts = Vec::new();
                for r in input.iter_arc() {
                    parts.push(exec.apply_flat(op, &[r.clone()].into_iter().collect(), budget)?);
                }
                Ok(whole.value_digests() != digests(parts.iter().map(|p| &**p)))
            }
        }
    }
}

/// Outcome of one sampled check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    /// Trials completed.
    pub trials: u32,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
    /// The budget ran out before all requested trials finished.
    #[serde(default)]
    pub budget_exhausted: bool,
}

impl CheckReport {
    fn consistent(trials: u32, budget_exhausted: bool) -> Self {
        CheckReport {
            trials,
            verdict: Verdict::Consistent,
            counterexample: None,
            budget_exhausted,
        }
    }

    fn violated(trials: u32, cx: Counterexample) -> Self {
        CheckReport {
            trials,
            verdict: Verdict::Violated,
            counterexample: Some(cx),
            budget_exhausted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub operator: String,
    pub seed: u64,
    pub monotonicity: CheckReport,
    pub additivity: CheckReport,
    /// Only run when additivity fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<CheckReport>,
    /// Largest number of distinct output values from a single input record.
    pub max_singleton_output: usize,
    pub class: PropertyClass,
}

struct Sampler {
    pool: Vec<Arc<Record>>,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(pool: &RecordSet, seed: u64, stream: u64) -> Result<Self, InferError> {
        if pool.is_empty() {
            return Err(InferError::EmptyPool);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Sampler {
            pool: pool.iter_arc().cloned().collect(),
            rng,
        })
    }

    /// Uniform size in `1..=min(|pool|, MAX_SAMPLE)`, then a uniform subset.
    fn subset(&mut self) -> RecordSet {
        let size = self.rng.random_range(1..=self.pool.len().min(MAX_SAMPLE));
        sample(&mut self.rng, self.pool.len(), size)
            .into_iter()
            .map(|i| self.pool[i].clone())
            .collect()
    }

    /// A uniformly sized strict subset of `of`.
    fn shrink(&mut self, of: &RecordSet) -> RecordSet {
        let items: Vec<&Arc<Record>> = of.iter_arc().collect();
        let size = self.rng.random_range(0..items.len());
        sample(&mut self.rng, items.len(), size)
            .into_iter()
            .map(|i| items[i].clone())
            .collect()
    }
}

fn stopped<T>(r: Result<T, EngineError>) -> Result<Option<T>, EngineError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_budget_stop() => Ok(None),
        Err(e) => Err(e),
    }
}

/// Draws nested pairs `I1 ⊂ I2` and checks `O(I1) ⊆ O(I2)` by value.
pub fn check_monotonicity_sample(
    exec: &Executor,
    op: &OperatorHandle,
    pool: &RecordSet,
    trials: u32,
    seed: u64,
    budget: &mut ExecutionBudget,
) -> Result<CheckReport, InferError> {
    let mut s = Sampler::new(pool, seed, 1)?;
    for done in 0..trials {
        let larger = s.subset();
        let smaller = s.shrink(&larger);
        let Some(a) = stopped(exec.apply_flat(op, &smaller, budget))? else {
            return Ok(CheckReport::consistent(done, true));
        };
        let Some(b) = stopped(exec.apply_flat(op, &larger, budget))? else {
            return Ok(CheckReport::consistent(done, true));
        };
        if !a.values_subset_of(&b) {
            return Ok(CheckReport::violated(
                done + 1,
                Counterexample::Monotonicity {
                    smaller,
                    larger,
                    smaller_output: (*a).clone(),
                    larger_output: (*b).clone(),
                },
            ));
        }
    }
    Ok(CheckReport::consistent(trials, false))
}

/// Samples subsets `I` and compares `O(I)` with the union of `O({r})`.
/// Also returns the largest singleton output seen.
fn additivity(
    exec: &Executor,
    op: &OperatorHandle,
    pool: &RecordSet,
    trials: u32,
    seed: u64,
    budget: &mut ExecutionBudget,
) -> Result<(CheckReport, usize), InferError> {
    let mut s = Sampler::new(pool, seed, 2)?;
    let mut widest = 0;
    for done in 0..trials {
        let input = s.subset();
        let Some(whole) = stopped(exec.apply_flat(op, &input, budget))? else {
            return Ok((CheckReport::consistent(done, true), widest));
        };
        let mut parts = Vec::new();
        for r in input.iter_arc() {
            let Some(out) =
                stopped(exec.apply_flat(op, &[r.clone()].into_iter().collect(), budget))?
            else {
                return Ok((CheckReport::consistent(done, true), widest));
            };
            widest = widest.max(out.value_digests().len());
            parts.push((*out).clone());
        }
        if whole.value_digests() != digests(&parts) {
            let cx = Counterexample::Additivity {
                input,
                output: (*whole).clone(),
                singleton_outputs: parts,
            };
            return Ok((CheckReport::violated(done + 1, cx), widest));
        }
    }
    Ok((CheckReport::consistent(trials, false), widest))
}

pub fn check_additivity(
    exec: &Executor,
    op: &OperatorHandle,
    pool: &RecordSet,
    trials: u32,
    seed: u64,
    budget: &mut ExecutionBudget,
) -> Result<CheckReport, InferError> {
    Ok(additivity(exec, op, pool, trials, seed, budget)?.0)
}

/// Heuristic many-to-one evidence: in every sampled `I`, one MISet per
/// output value must partition `I` exactly (pairwise disjoint, covering
/// every record). No counterexample is kept; failing only means the
/// heuristic did not apply.
fn check_partition(
    exec: &Executor,
    op: &OperatorHandle,
    pool: &RecordSet,
    trials: u32,
    seed: u64,
    budget: &mut ExecutionBudget,
) -> Result<CheckReport, InferError> {
    let mut s = Sampler::new(pool, seed, 3)?;
    let failed = |done| CheckReport {
        trials: done,
        verdict: Verdict::Violated,
        counterexample: None,
        budget_exhausted: false,
    };
    for done in 0..trials {
        let input = s.subset();
        let Some(out) = stopped(exec.apply_flat(op, &input, budget))? else {
            return Ok(CheckReport::consistent(done, true));
        };
        let mut covered = BTreeSet::new();
        let mut seen = BTreeSet::new();
        for r in out.iter() {
            if !seen.insert(r.digest()) {
                continue;
            }
            let q = ProvenanceQuery::new(exec, op, &input, r);
            let Some(m) = stopped(q.find_any_miset(budget))? else {
                return Ok(CheckReport::consistent(done, true));
            };
            for id in m.ids() {
                if !covered.insert(id) {
                    return Ok(failed(done + 1));
                }
            }
        }
        if covered.len() != input.len() {
            return Ok(failed(done + 1));
        }
    }
    Ok(CheckReport::consistent(trials, false))
}

/// Classifies `op` from samples of `pool`. Without conclusive evidence the
/// class is `Arbitrary`; a monotonicity counterexample marks it violated.
pub fn infer_properties(
    exec: &Executor,
    op: &OperatorHandle,
    pool: &RecordSet,
    trials: u32,
    seed: u64,
    budget: &mut ExecutionBudget,
) -> Result<EvidenceReport, InferError> {
    let monotonicity = check_monotonicity_sample(exec, op, pool, trials, seed, budget)?;
    let (additivity, widest) = additivity(exec, op, pool, trials, seed, budget)?;
    let partition = if additivity.verdict == Verdict::Violated {
        Some(check_partition(exec, op, pool, trials, seed, budget)?)
    } else {
        None
    };

    let monotone = match monotonicity.verdict {
        Verdict::Violated => Monotonicity::Violated,
        Verdict::Consistent => Monotonicity::SampledConsistent {
            trials: monotonicity.trials,
        },
    };
    let evidence = ShapeEvidence::Sampled {
        trials: additivity.trials,
        seed,
    };
    let class = match (additivity.verdict, &partition) {
        (Verdict::Consistent, _) if widest <= 1 => {
            PropertyClass::with_shape(Shape::OneToOne, evidence)
        }
        (Verdict::Consistent, _) => PropertyClass::with_shape(Shape::OneToMany, evidence),
        (Verdict::Violated, Some(p)) if p.verdict == Verdict::Consistent && !p.budget_exhausted => {
            PropertyClass::heuristic_many_to_one(ShapeEvidence::Sampled {
                trials: p.trials,
                seed,
            })
        }
        _ => PropertyClass::arbitrary(),
    }
    .with_monotonicity(monotone);

    Ok(EvidenceReport {
        operator: op.name.clone(),
        seed,
        monotonicity,
        additivity,
        partition,
        max_singleton_output: widest,
        class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SyntheticOpSpec;

    fn pool(items: &[&str]) -> RecordSet {
        items
            .iter()
            .enumerate()
            .map(|(i, v)| Record::text(0, format!("p{i:02}"), *v))
            .collect()
    }

    fn infer(spec: SyntheticOpSpec, p: &RecordSet) -> EvidenceReport {
        infer_properties(
            &Executor::new(),
            &spec.build("op"),
            p,
            DEFAULT_TRIALS,
            1,
            &mut ExecutionBudget::unlimited(),
        )
        .unwrap()
    }

    #[test]
    fn identity_is_one_to_one() {
        let r = infer(SyntheticOpSpec::Identity, &pool(&["a", "b", "c", "d"]));
        assert_eq!(r.class.shape(), Shape::OneToOne);
        assert_eq!(
            r.class.monotone(),
            Monotonicity::SampledConsistent { trials: 32 }
        );
        assert!(r.class.fast_path_eligible());
    }

    #[test]
    fn splitter_is_one_to_many() {
        let r = infer(
            SyntheticOpSpec::Splitter {
                delimiter: "|".into(),
            },
            &pool(&["a|b", "c|d", "e|f", "g|h", "i|j"]),
        );
        assert_eq!(r.class.shape(), Shape::OneToMany);
        assert_eq!(r.max_singleton_output, 2);
    }

    #[test]
    fn threshold_is_arbitrary_but_monotone() {
        let r = infer(
            SyntheticOpSpec::SupportThreshold { t: 2, key: None },
            &pool(&["s", "s", "s", "q", "q"]),
        );
        assert_eq!(r.class.shape(), Shape::Arbitrary);
        assert!(matches!(
            r.class.monotone(),
            Monotonicity::SampledConsistent { .. }
        ));
        let cx = r.additivity.counterexample.unwrap();
        let op = SyntheticOpSpec::SupportThreshold { t: 2, key: None }.build("op");
        assert!(cx
            .replay(
                &Executor::uncached(),
                &op,
                &mut ExecutionBudget::unlimited()
            )
            .unwrap());
    }

    #[test]
    fn top1_violates_monotonicity_replayably() {
        let spec = SyntheticOpSpec::Top1ByScore {
            field: "score".into(),
        };
        let p = SyntheticOpSpec::Scorer.eval(&[pool(&["a", "bb", "ccc", "dddd", "eeeee"])]);
        let r = infer(spec.clone(), &p);
        assert_eq!(r.monotonicity.verdict, Verdict::Violated);
        assert_eq!(r.class.monotone(), Monotonicity::Violated);
        let cx = r.monotonicity.counterexample.unwrap();
        assert!(cx
            .replay(
                &Executor::uncached(),
                &spec.build("op"),
                &mut ExecutionBudget::unlimited()
            )
            .unwrap());
    }

    #[test]
    fn explicit_threshold_and_dedup_counterexamples() {
        let exec = Executor::uncached();
        let th = SyntheticOpSpec::SupportThreshold { t: 2, key: None }.build("th");
        let cx = Counterexample::Additivity {
            input: pool(&["s", "s"]),
            output: RecordSet::new(),
            singleton_outputs: vec![],
        };
        assert!(cx
            .replay(&exec, &th, &mut ExecutionBudget::unlimited())
            .unwrap());

        let dd = SyntheticOpSpec::Dedup {
            key: None,
            min_copies: 2,
        };
        let r = infer(dd.clone(), &pool(&["X", "x", "Y", "y"]));
        assert_eq!(r.additivity.verdict, Verdict::Violated);
        let r = infer(
            SyntheticOpSpec::Dedup {
                key: None,
                min_copies: 1,
            },
            &pool(&["a", "b", "c"]),
        );
        assert_eq!(r.additivity.verdict, Verdict::Consistent);
    }

    #[test]
    fn zero_trials_is_vacuous() {
        let r = check_monotonicity_sample(
            &Executor::new(),
            &SyntheticOpSpec::Identity.build("id"),
            &pool(&["a"]),
            0,
            1,
            &mut ExecutionBudget::unlimited(),
        )
        .unwrap();
        assert_eq!(r, CheckReport::consistent(0, false));
        let r = infer_properties(
            &Executor::new(),
            &SyntheticOpSpec::Identity.build("id"),
            &pool(&["a"]),
            0,
            1,
            &mut ExecutionBudget::unlimited(),
        )
        .unwrap();
        assert!(!r.class.fast_path_eligible());
    }

    #[test]
    fn deterministic_and_budget_aware() {
        let p = pool(&["s", "s", "s", "q"]);
        let a = infer(SyntheticOpSpec::SupportThreshold { t: 2, key: None }, &p);
        let b = infer(SyntheticOpSpec::SupportThreshold { t: 2, key: None }, &p);
        assert_eq!(a, b);
        let r = infer_properties(
            &Executor::new(),
            &SyntheticOpSpec::Identity.build("id"),
            &p,
            32,
            1,
            &mut ExecutionBudget::with_limit(3),
        )
        .unwrap();
        assert!(r.monotonicity.budget_exhausted);
        assert!(r.monotonicity.trials < 32);
        assert_eq!(
            check_additivity(
                &Executor::new(),
                &SyntheticOpSpec::Identity.build("id"),
                &RecordSet::new(),
                1,
                1,
                &mut ExecutionBudget::unlimited()
            ),
            Err(InferError::EmptyPool)
        );
    }
}
