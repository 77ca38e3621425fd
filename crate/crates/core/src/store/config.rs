//! Pipeline configuration documents.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::external::ExternalOperator;
use crate::harness::SyntheticOpSpec;
use crate::model::{
    FieldRule, OperatorHandle, PipelineGraph, PropertyClass, Shape, ShapeEvidence, SpecLevel,
    Violation, WitnessLine, WitnessTable,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid pipeline config: {0}")]
    Parse(String),
    #[error("node `{node}`: {message}")]
    Node { node: String, message: String },
    #[error("invalid pipeline: {}", render_violations(.0))]
    Invalid(Vec<Violation>),
}

fn render_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum SpecLevelConfig {
    BlackBox,
    Exact {
        #[serde(default)]
        table: Vec<WitnessLine>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        witness_file: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        annotation: Option<String>,
    },
    IoSpec {
        #[serde(default)]
        table: Vec<WitnessLine>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        witness_file: Option<PathBuf>,
    },
    IntegrityConstraint {
        rules: Vec<FieldRule>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_level: Option<SpecLevelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_shape: Option<Shape>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeConfig {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub edges: Vec<EdgeConfig>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Canonical serialization: struct fields in declaration order, object
    /// keys sorted.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Copies the rows of every witness file into the config so it no longer
    /// depends on files next to it.
    pub fn inline_witness_files(&mut self, base_dir: Option<&Path>) -> Result<(), ConfigError> {
        for n in &mut self.nodes {
            let id = n.id.clone();
            let (rows, file) = match &mut n.spec_level {
                Some(SpecLevelConfig::Exact {
                    table,
                    witness_file,
                    ..
                })
                | Some(SpecLevelConfig::IoSpec {
                    table,
                    witness_file,
                }) => (table, witness_file),
                _ => continue,
            };
            let Some(f) = file.take() else { continue };
            let path = match base_dir {
                Some(b) if f.is_relative() => b.join(&f),
                _ => f,
            };
            let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            let parsed = WitnessTable::parse_jsonl(&text).map_err(|message| ConfigError::Node {
                node: id.clone(),
                message,
            })?;
            rows.extend(
                parsed
                    .entries
                    .into_iter()
                    .map(|(output_id, input_ids)| WitnessLine {
                        output_id,
                        input_ids,
                    }),
            );
        }
        Ok(())
    }

    pub fn node(&self, id: &str) -> Option<&NodeConfig> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Builds and validates the operator graph. Relative witness files are
    /// resolved against `base_dir`.
    pub fn build_graph(&self, base_dir: Option<&Path>) -> Result<PipelineGraph, ConfigError> {
        let mut g = PipelineGraph::new();
        for n in &self.nodes {
            g.add_node(n.id.clone(), n.build_operator(base_dir)?);
        }
        for e in &self.edges {
            g.add_edge(&e.from, &e.to, e.port);
        }
        g.validate().map_err(ConfigError::Invalid)?;
        Ok(g)
    }
}

impl NodeConfig {
    pub fn synthetic(id: &str, spec: &SyntheticOpSpec) -> Self {
        let mut params = serde_json::to_value(spec).expect("spec serializes");
        if let serde_json::Value::Object(m) = &mut params {
            m.remove("kind");
        }
        NodeConfig {
            id: id.to_string(),
            kind: spec.kind().to_string(),
            params,
            spec_level: None,
            declared_shape: None,
        }
    }

    pub fn with_declared_shape(mut self, shape: Shape) -> Self {
        self.declared_shape = Some(shape);
        self
    }

    fn err(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Node {
            node: self.id.clone(),
            message: message.into(),
        }
    }

    fn param_u64(&self, key: &str) -> Option<u64> {
        self.params.get(key).and_then(serde_json::Value::as_u64)
    }

    pub fn build_operator(&self, base_dir: Option<&Path>) -> Result<OperatorHandle, ConfigError> {
        let mut op = if self.kind == "external" {
            let ext = ExternalOperator::from_params(&self.params).map_err(|m| self.err(m))?;
            ext.into_handle(&self.id)
        } else {
            let spec =
                SyntheticOpSpec::from_config(&self.kind, &self.params).map_err(|m| self.err(m))?;
            match self.param_u64("delay_ms") {
                Some(ms) if ms > 0 => spec.build_delayed(&self.id, Duration::from_millis(ms)),
                _ => spec.build(&self.id),
            }
        };
        if let Some(level) = &self.spec_level {
            op = op.with_spec_level(self.resolve_spec_level(level, base_dir)?);
        }
        if let Some(shape) = self.declared_shape {
            let monotone = op.properties.monotone();
            let class = match shape {
                Shape::Arbitrary => PropertyClass::arbitrary(),
                Shape::ManyToOne => PropertyClass::heuristic_many_to_one(ShapeEvidence::Declared),
                s => PropertyClass::with_shape(s, ShapeEvidence::Declared),
            };
            op = op.with_properties(class.with_monotonicity(monotone));
        } else if op
            .spec_level
            .witness_table()
            .is_some_and(WitnessTable::all_single_source)
        {
            // every output traced to a single input: record-wise by spec
            let monotone = op.properties.monotone();
            op = op.with_properties(
                PropertyClass::with_shape(Shape::OneToMany, ShapeEvidence::SpecLevel)
                    .with_monotonicity(monotone),
            );
        }
        Ok(op)
    }

    fn resolve_spec_level(
        &self,
        level: &SpecLevelConfig,
        base_dir: Option<&Path>,
    ) -> Result<SpecLevel, ConfigError> {
        let table = |rows: &[WitnessLine],
                     file: &Option<PathBuf>|
         -> Result<WitnessTable, ConfigError> {
            let mut t = WitnessTable::default();
            for row in rows {
                t.entries
                    .entry(row.output_id.clone())
                    .or_default()
                    .extend(row.input_ids.iter().cloned());
            }
            if let Some(f) = file {
                let path = match base_dir {
                    Some(b) if f.is_relative() => b.join(f),
                    _ => f.clone(),
                };
                let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let parsed = WitnessTable::parse_jsonl(&text).map_err(|m| self.err(m))?;
                for (k, v) in parsed.entries {
                    t.entries.entry(k).or_default().extend(v);
                }
            }
            Ok(t)
        };
        Ok(match level {
            SpecLevelConfig::BlackBox => SpecLevel::BlackBox,
            SpecLevelConfig::Exact {
                table: rows,
                witness_file,
                annotation,
            } => SpecLevel::Exact {
                table: table(rows, witness_file)?,
                annotation: annotation.clone(),
            },
            SpecLevelConfig::IoSpec {
                table: rows,
                witness_file,
            } => SpecLevel::IoSpec {
                table: table(rows, witness_file)?,
            },
            SpecLevelConfig::IntegrityConstraint { rules } => SpecLevel::IntegrityConstraint {
                rules: rules.clone(),
            },
        })
    }
}
