//! Executing a pipeline graph in topological order.

use std::collections::BTreeMap;

use crate::error::EngineError;
use crate::model::{
    ExecutionBudget, Executor, OperatorError, OperatorHandle, PipelineGraph, RecordSet, Violation,
};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid pipeline: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}`: {source}")]
    Node {
        node: String,
        #[source]
        source: EngineError,
    },
}

/// What one node saw and produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRun {
    /// Port-tagged, flattened input.
    pub input: RecordSet,
    pub output: RecordSet,
    pub budget: ExecutionBudget,
}

/// The flattened input of `node`: the source gets `source_input`, every
/// other node gets each predecessor's output tagged with the edge's port.
pub fn assemble_input(
    graph: &PipelineGraph,
    node: &str,
    source_input: &RecordSet,
    outputs: &BTreeMap<String, NodeRun>,
) -> RecordSet {
    let preds = graph.predecessors(node);
    if preds.is_empty() {
        return source_input.clone();
    }
    let mut input = RecordSet::new();
    for (port, pred) in preds {
        if let Some(run) = outputs.get(pred) {
            for r in run.output.iter() {
                input.insert(r.with_port(port));
            }
        }
    }
    input
}

/// Runs every node (or only those upstream of `upto`) once, in
/// topological order.
pub fn execute_pipeline(
    graph: &PipelineGraph,
    source_input: &RecordSet,
    exec: &Executor,
    budget: &mut ExecutionBudget,
    upto: Option<&str>,
) -> Result<BTreeMap<String, NodeRun>, RunError> {
    graph.validate().map_err(RunError::Invalid)?;
    let order: Vec<&str> = match upto {
        Some(n) => {
            if graph.node(n).is_none() {
                return Err(RunError::UnknownNode(n.to_string()));
            }
            graph.upstream_closure(n)
        }
        None => graph.topo_order().unwrap_or_default(),
    };
    let mut runs: BTreeMap<String, NodeRun> = BTreeMap::new();
    for id in order {
        let node = graph.node(id).expect("validated");
        let input = assemble_input(graph, id, source_input, &runs);
        let start = budget.snapshot();
        let output = exec
            .apply_flat(&node.op, &input, budget)
            .map_err(|source| RunError::Node {
                node: id.to_string(),
                source,
            })?;
        runs.insert(
            id.to_string(),
            NodeRun {
                input,
                output: (*output).clone(),
                budget: budget.since(&start),
            },
        );
    }
    Ok(runs)
}

/// The sub-pipeline ending at `node` as a single operator over the source's
/// ports. Each application runs the whole sub-pipeline directly.
pub fn chain_operator(graph: &PipelineGraph, node: &str) -> Result<OperatorHandle, RunError> {
    graph.validate().map_err(RunError::Invalid)?;
    let source = graph.source().expect("validated").to_string();
    let arity = graph.node(&source).expect("validated").op.arity;
    if graph.node(node).is_none() {
        return Err(RunError::UnknownNode(node.to_string()));
    }
    let graph = graph.clone();
    let target = node.to_string();
    Ok(OperatorHandle::from_fn(
        format!("chain:{source}..{node}"),
        arity,
        move |inputs: &[RecordSet]| {
            let flat = crate::model::flatten_ports(inputs);
            let exec = Executor::uncached();
            let mut budget = ExecutionBudget::unlimited();
            let mut runs = execute_pipeline(&graph, &flat, &exec, &mut budget, Some(&target))
                .map_err(|e| OperatorError::Failed(e.to_string()))?;
            Ok(runs.remove(&target).map(|r| r.output).unwrap_or_default())
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SyntheticOpSpec;
    use crate::model::Record;

    fn two_identities() -> PipelineGraph {
        let mut g = PipelineGraph::new();
        g.add_node("a", SyntheticOpSpec::Identity.build("a"))
            .add_node("b", SyntheticOpSpec::Identity.build("b"))
            .add_edge("a", "b", 0);
        g
    }

    #[test]
    fn identity_chain() {
        let g = two_identities();
        let input: RecordSet = [Record::text(0, "a", "x")].into_iter().collect();
        let mut b = ExecutionBudget::unlimited();
        let runs = execute_pipeline(&g, &input, &Executor::new(), &mut b, None).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs["b"].output, input);
        assert_eq!(b.executions, 2);
        let total: u64 = runs.values().map(|r| r.budget.executions).sum();
        assert_eq!(total, b.executions);
    }

    #[test]
    fn failing_node_is_named() {
        let mut g = two_identities();
        g.node_mut("b").unwrap().op = OperatorHandle::from_fn("b", 1, |_: &[RecordSet]| {
            Err(OperatorError::Failed("boom".into()))
        });
        let err = execute_pipeline(
            &g,
            &RecordSet::new(),
            &Executor::new(),
            &mut ExecutionBudget::unlimited(),
            None,
        )
        .unwrap_err();
        assert!(
            matches!(err, RunError::Node { ref node, .. } if node == "b"),
            "{err}"
        );
    }

    #[test]
    fn chain_operator_runs_prefix() {
        let mut g = PipelineGraph::new();
        g.add_node(
            "sg",
            SyntheticOpSpec::Splitter {
                delimiter: "|".into(),
            }
            .build("sg"),
        )
        .add_node("id", SyntheticOpSpec::Identity.build("id"))
        .add_edge("sg", "id", 0);
        let op = chain_operator(&g, "id").unwrap();
        let input: RecordSet = [Record::text(0, "d", "a|b")].into_iter().collect();
        assert_eq!(op.apply_raw(&[input]).unwrap().len(), 2);
    }
}
