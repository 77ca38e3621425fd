//! Records, operators, pipelines and the counted application primitive.

mod budget;
mod executor;
mod operator;
mod pipeline;
mod record;

pub use budget::{CancelToken, ExecutionBudget};
pub use executor::{Executor, Matching, MemoCache, MemoKey};
pub use operator::{
    Backing, FieldRule, Monotonicity, Operator, OperatorError, OperatorHandle, PropertyClass,
    Shape, ShapeEvidence, SpecLevel, WitnessLine, WitnessTable, MIN_SAMPLED_TRIALS,
};
pub use pipeline::{Edge, PipelineGraph, PipelineNode, Violation};
pub use record::{
    flatten_ports, unflatten_ports, Digest, ParseRecordIdError, Record, RecordFileError, RecordId,
    RecordLine, RecordSet, Scalar, Value,
};
