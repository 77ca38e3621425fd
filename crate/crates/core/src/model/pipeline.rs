use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::operator::OperatorHandle;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub port: u16,
}

#[derive(Debug, Clone)]
pub struct PipelineNode {
    pub id: String,
    pub op: OperatorHandle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Cycle {
        nodes: Vec<String>,
    },
    NoSource,
    MultipleSources {
        nodes: Vec<String>,
    },
    NoSink,
    MultipleSinks {
        nodes: Vec<String>,
    },
    DuplicateNode {
        node: String,
    },
    UnknownNode {
        node: String,
    },
    PortOutOfRange {
        node: String,
        port: u16,
        arity: usize,
    },
    PortUncovered {
        node: String,
        port: u16,
    },
    PortMultiplyFed {
        node: String,
        port: u16,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle { nodes } => write!(f, "cycle through {}", nodes.join(", ")),
            Violation::NoSource => f.write_str("no source node"),
            Violation::MultipleSources { nodes } => {
                write!(f, "multiple sources: {}", nodes.join(", "))
            }
            Violation::NoSink => f.write_str("no sink node"),
            Violation::MultipleSinks { nodes } => write!(f, "multiple sinks: {}", nodes.join(", ")),
            Violation::DuplicateNode { node } => write!(f, "duplicate node id `{node}`"),
            Violation::UnknownNode { node } => write!(f, "edge references unknown node `{node}`"),
            Violation::PortOutOfRange { node, port, arity } => {
                write!(
                    f,
                    "node `{node}` has {arity} ports; edge targets port {port}"
                )
            }
            Violation::PortUncovered { node, port } => {
                write!(f, "port {port} of node `{node}` has no incoming edge")
            }
            Violation::PortMultiplyFed { node, port } => {
                write!(
                    f,
                    "port {port} of node `{node}` has more than one incoming edge"
                )
            }
        }
    }
}

/// Operator DAG. The unique node without incoming edges (the source) is fed
/// the pipeline input, port-tagged; the unique node without outgoing edges
/// (the sink) produces the final output.
#[derive(Debug, Clone, Default)]
pub struct PipelineGraph {
    pub nodes: Vec<PipelineNode>,
    pub edges: Vec<Edge>,
}

impl PipelineGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>, op: OperatorHandle) -> &mut Self {
        self.nodes.push(PipelineNode { id: id.into(), op });
        self
    }

    pub fn add_edge(&mut self, from: &str, to: &str, port: u16) -> &mut Self {
        self.edges.push(Edge {
            from: from.to_string(),
            to: to.to_string(),
            port,
        });
        self
    }

    pub fn node(&self, id: &str) -> Option<&PipelineNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut PipelineNode> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    fn node_ids(&self) -> BTreeSet<&str> {
        self.nodes.iter().map(|n| n.id.as_str()).collect()
    }

    fn sources_and_sinks(&self) -> (Vec<String>, Vec<String>) {
        let with_in: BTreeSet<&str> = self.edges.iter().map(|e| e.to.as_str()).collect();
        let with_out: BTreeSet<&str> = self.edges.iter().map(|e| e.from.as_str()).collect();
        let sources = self
            .nodes
            .iter()
            .filter(|n| !with_in.contains(n.id.as_str()))
            .map(|n| n.id.clone())
            .collect();
        let sinks = self
            .nodes
            .iter()
            .filter(|n| !with_out.contains(n.id.as_str()))
            .map(|n| n.id.clone())
            .collect();
        (sources, sinks)
    }

    pub fn source(&self) -> Option<&str> {
        let (sources, _) = self.sources_and_sinks();
        match sources.as_slice() {
            [one] => self.node(one).map(|n| n.id.as_str()),
            _ => None,
        }
    }

    pub fn sink(&self) -> Option<&str> {
        let (_, sinks) = self.sources_and_sinks();
        match sinks.as_slice() {
            [one] => self.node(one).map(|n| n.id.as_str()),
            _ => None,
        }
    }

    /// `(port, producer)` pairs feeding `node`, ordered by port.
    pub fn predecessors(&self, node: &str) -> Vec<(u16, &str)> {
        let mut preds: Vec<(u16, &str)> = self
            .edges
            .iter()
            .filter(|e| e.to == node)
            .map(|e| (e.port, e.from.as_str()))
            .collect();
        preds.sort();
        preds
    }

    pub fn successors(&self, node: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.from == node)
            .map(|e| e.to.as_str())
            .collect()
    }

    /// Kahn's algorithm with ties broken by node declaration order. Returns
    /// `None` when the graph has a cycle.
    pub fn topo_order(&self) -> Option<Vec<&str>> {
        let order: BTreeMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut indegree: BTreeMap<&str, usize> = order.keys().map(|k| (*k, 0)).collect();
        for e in &self.edges {
            if let Some(d) = indegree.get_mut(e.to.as_str()) {
                *d += 1;
            }
        }
        let mut ready: Vec<&str> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(k, _)| *k)
            .collect();
        ready.sort_by_key(|k| order[k]);
        let mut queue: VecDeque<&str> = ready.into();
        let mut out = Vec::with_capacity(self.nodes.len());
        while let Some(n) = queue.pop_front() {
            out.push(n);
            let mut next = Vec::new();
            for e in self.edges.iter().filter(|e| e.from == n) {
                if let Some(d) = indegree.get_mut(e.to.as_str()) {
                    *d -= 1;
                    if *d == 0 {
                        next.push(e.to.as_str());
                    }
                }
            }
            next.sort_by_key(|k| order.get(k).copied().unwrap_or(usize::MAX));
            next.dedup();
            queue.extend(next);
        }
        (out.len() == self.nodes.len()).then_some(out)
    }

    /// `node` and every node upstream of it, in topological order.
    pub fn upstream_closure(&self, node: &str) -> Vec<&str> {
        let mut keep = BTreeSet::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            if keep.insert(n) {
                stack.extend(self.predecessors(n).into_iter().map(|(_, p)| p));
            }
        }
        self.topo_order()
            .unwrap_or_default()
            .into_iter()
            .filter(|n| keep.contains(n))
            .collect()
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut violations = Vec::new();
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id.as_str()) {
                violations.push(Violation::DuplicateNode { node: n.id.clone() });
            }
        }
        let ids = self.node_ids();
        for e in &self.edges {
            for end in [&e.from, &e.to] {
                if !ids.contains(end.as_str()) {
                    violations.push(Violation::UnknownNode { node: end.clone() });
                }
            }
        }
        if self.edges.iter().any(|e| e.from == e.to) || self.topo_order().is_none() {
            violations.push(Violation::Cycle {
                nodes: self.cyclic_nodes(),
            });
        }
        let (sources, sinks) = self.sources_and_sinks();
        match sources.len() {
            0 => violations.push(Violation::NoSource),
            1 => {}
            _ => violations.push(Violation::MultipleSources {
                nodes: sources.clone(),
            }),
        }
        match sinks.len() {
            0 => violations.push(Violation::NoSink),
            1 => {}
            _ => violations.push(Violation::MultipleSinks { nodes: sinks }),
        }
        for n in &self.nodes {
            if sources.contains(&n.id) {
                continue;
            }
            let mut fed: BTreeMap<u16, usize> = BTreeMap::new();
            for e in self.edges.iter().filter(|e| e.to == n.id) {
                if e.port as usize >= n.op.arity {
                    violations.push(Violation::PortOutOfRange {
                        node: n.id.clone(),
                        port: e.port,
                        arity: n.op.arity,
                    });
                }
                *fed.entry(e.port).or_default() += 1;
            }
            for port in 0..n.op.arity as u16 {
                match fed.get(&port).copied().unwrap_or(0) {
                    0 => violations.push(Violation::PortUncovered {
                        node: n.id.clone(),
                        port,
                    }),
                    1 => {}
                    _ => violations.push(Violation::PortMultiplyFed {
                        node: n.id.clone(),
                        port,
                    }),
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Nodes that cannot be topologically ordered.
    fn cyclic_nodes(&self) -> Vec<String> {
        let ordered: BTreeSet<String> = {
            // repeatedly strip nodes without remaining incoming edges
            let mut remaining: BTreeSet<&str> = self.node_ids();
            loop {
                let removable: Vec<&str> = remaining
                    .iter()
                    .copied()
                    .filter(|n| {
                        !self
                            .edges
                            .iter()
                            .any(|e| e.to == *n && remaining.contains(e.from.as_str()))
                    })
                    .collect();
                if removable.is_empty() {
                    break;
                }
                for n in removable {
                    remaining.remove(n);
                }
            }
            self.node_ids()
                .difference(&remaining)
                .map(|s| s.to_string())
                .collect()
        };
        self.nodes
            .iter()
            .filter(|n| !ordered.contains(&n.id))
            .map(|n| n.id.clone())
            .collect()
    }
}
