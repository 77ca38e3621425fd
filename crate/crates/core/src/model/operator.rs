use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::record::RecordSet;

/// Minimum number of sampling trials before a sampled shape verdict may
/// unlock a fast path.
pub const MIN_SAMPLED_TRIALS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OperatorError {
    #[error("operator failed: {0}")]
    Failed(String),
    #[error("operator exited with status {code:?}: {stderr}")]
    NonZeroExit { code: Option<i32>, stderr: String },
    #[error("malformed output at line {line}: {message}")]
    MalformedOutput { line: usize, message: String },
    #[error("operator timed out after {0:?}")]
    Timeout(Duration),
    #[error("expected {expected} input ports, got {got}")]
    Arity { expected: usize, got: usize },
}

/// A deterministic black-box mapping from a tuple of record sets to a record
/// set. Implementations must return value-equal outputs for equal inputs.
pub trait Operator: Send + Sync {
    fn apply(&self, inputs: &[RecordSet]) -> Result<RecordSet, OperatorError>;
}

impl<F> Operator for F
where
    F: Fn(&[RecordSet]) -> Result<RecordSet, OperatorError> + Send + Sync,
{
    fn apply(&self, inputs: &[RecordSet]) -> Result<RecordSet, OperatorError> {
        self(inputs)
    }
}

/// Output id → ids of the input records used to build it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessTable {
    pub entries: BTreeMap<String, Vec<String>>,
}

/// One JSON Lines row of a witness table file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessLine {
    pub output_id: String,
    pub input_ids: Vec<String>,
}

impl WitnessTable {
    pub fn parse_jsonl(text: &str) -> Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: WitnessLine =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", idx + 1))?;
            entries
                .entry(row.output_id)
                .or_insert_with(Vec::new)
                .extend(row.input_ids);
        }
        Ok(WitnessTable { entries })
    }

    /// True when every output is attributed to exactly one input, which is
    /// evidence for a one-to-one or one-to-many shape.
    pub fn all_single_source(&self) -> bool {
        !self.entries.is_empty() && self.entries.values().all(|v| v.len() == 1)
    }
}

/// Key/foreign-key rule: the output's `output_field` equals the
/// `input_field` of the inputs it was built from. `input_field` may be `id`
/// to refer to the record id itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRule {
    pub output_field: String,
    pub input_field: String,
}

/// How much is known about an operator.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum SpecLevel {
    #[default]
    BlackBox,
    /// Which inputs contributed and how; the "how" is an opaque annotation.
    Exact {
        table: WitnessTable,
        annotation: Option<String>,
    },
    IoSpec {
        table: WitnessTable,
    },
    IntegrityConstraint {
        rules: Vec<FieldRule>,
    },
}

impl SpecLevel {
    pub fn name(&self) -> &'static str {
        match self {
            SpecLevel::BlackBox => "black_box",
            SpecLevel::Exact { .. } => "exact",
            SpecLevel::IoSpec { .. } => "io_spec",
            SpecLevel::IntegrityConstraint { .. } => "integrity_constraint",
        }
    }

    pub fn witness_table(&self) -> Option<&WitnessTable> {
        match self {
            SpecLevel::Exact { table, .. } | SpecLevel::IoSpec { table } => Some(table),
            _ => None,
        }
    }

    pub fn has_witnesses(&self) -> bool {
        !matches!(self, SpecLevel::BlackBox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    OneToOne,
    OneToMany,
    ManyToOne,
    Arbitrary,
}

impl Shape {
    /// Shapes that guarantee singleton MISets.
    pub fn is_record_wise(self) -> bool {
        matches!(self, Shape::OneToOne | Shape::OneToMany)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::OneToOne => "one-to-one",
            Shape::OneToMany => "one-to-many",
            Shape::ManyToOne => "many-to-one",
            Shape::Arbitrary => "arbitrary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Monotonicity {
    Asserted,
    SampledConsistent { trials: u32 },
    Violated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum ShapeEvidence {
    Declared,
    SpecLevel,
    Sampled { trials: u32, seed: u64 },
}

/// Monotonicity and shape of an operator, with the evidence that licenses a
/// shape narrower than `Arbitrary`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyClass {
    monotone: Monotonicity,
    shape: Shape,
    evidence: Option<ShapeEvidence>,
    /// Set for shapes claimed from heuristics rather than a checkable test.
    #[serde(default)]
    heuristic: bool,
}

impl Default for PropertyClass {
    fn default() -> Self {
        PropertyClass::arbitrary()
    }
}

impl PropertyClass {
    pub fn arbitrary() -> Self {
        PropertyClass {
            monotone: Monotonicity::Asserted,
            shape: Shape::Arbitrary,
            evidence: None,
            heuristic: false,
        }
    }

    pub fn with_shape(shape: Shape, evidence: ShapeEvidence) -> Self {
        PropertyClass {
            monotone: Monotonicity::Asserted,
            shape,
            evidence: Some(evidence),
            heuristic: false,
        }
    }

    pub fn heuristic_many_to_one(evidence: ShapeEvidence) -> Self {
        PropertyClass {
            heuristic: true,
            ..PropertyClass::with_shape(Shape::ManyToOne, evidence)
        }
    }

    pub fn with_monotonicity(mut self, monotone: Monotonicity) -> Self {
        self.monotone = monotone;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn monotone(&self) -> Monotonicity {
        self.monotone
    }

    pub fn evidence(&self) -> Option<&ShapeEvidence> {
        self.evidence.as_ref()
    }

    pub fn is_heuristic(&self) -> bool {
        self.heuristic
    }

    /// Whether the linear singleton scan may be used.
    pub fn fast_path_eligible(&self) -> bool {
        if !self.shape.is_record_wise() || self.monotone == Monotonicity::Violated {
            return false;
        }
        match &self.evidence {
            Some(ShapeEvidence::Declared) | Some(ShapeEvidence::SpecLevel) => true,
            Some(ShapeEvidence::Sampled { trials, .. }) => *trials >= MIN_SAMPLED_TRIALS,
            None => false,
        }
    }

    /// Drops the shape claim after it was contradicted at provenance time.
    pub fn downgraded(&self) -> Self {
        PropertyClass {
            monotone: self.monotone,
            shape: Shape::Arbitrary,
            evidence: None,
            heuristic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backing {
    Builtin,
    External,
    Virtual,
}

/// Shared, immutable description of an operator plus its implementation.
#[derive(Clone)]
pub struct OperatorHandle {
    pub name: String,
    pub arity: usize,
    pub spec_level: SpecLevel,
    pub properties: PropertyClass,
    pub backing: Backing,
    imp: Arc<dyn Operator>,
}

impl OperatorHandle {
    pub fn new(name: impl Into<String>, arity: usize, imp: Arc<dyn Operator>) -> Self {
        assert!(arity >= 1, "operators take at least one input port");
        OperatorHandle {
            name: name.into(),
            arity,
            spec_level: SpecLevel::BlackBox,
            properties: PropertyClass::arbitrary(),
            backing: Backing::Builtin,
            imp,
        }
    }

    pub fn from_fn<F>(name: impl Into<String>, arity: usize, f: F) -> Self
    where
        F: Fn(&[RecordSet]) -> Result<RecordSet, OperatorError> + Send + Sync + 'static,
    {
        OperatorHandle::new(name, arity, Arc::new(f))
    }

    pub fn with_spec_level(mut self, level: SpecLevel) -> Self {
        self.spec_level = level;
        self
    }

    pub fn with_properties(mut self, properties: PropertyClass) -> Self {
        self.properties = properties;
        self
    }

    pub fn with_backing(mut self, backing: Backing) -> Self {
        self.backing = backing;
        self
    }

    pub fn is_virtual(&self) -> bool {
        self.backing == Backing::Virtual
    }

    /// Direct, uncounted application. Algorithms go through
    /// [`crate::model::Executor::apply_counted`] instead.
    pub fn apply_raw(&self, inputs: &[RecordSet]) -> Result<RecordSet, OperatorError> {
        if inputs.len() != self.arity {
            return Err(OperatorError::Arity {
                expected: self.arity,
                got: inputs.len(),
            });
        }
        self.imp.apply(inputs)
    }
}

impl fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("spec_level", &self.spec_level.name())
            .field("shape", &self.properties.shape())
            .field("backing", &self.backing)
            .finish()
    }
}
