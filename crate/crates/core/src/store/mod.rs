//! Pipeline execution, run traces and the provenance cache.

pub mod config;
pub mod external;
mod run;
mod trace;

pub use run::{assemble_input, chain_operator, execute_pipeline, NodeRun, RunError};
pub use trace::{
    derive_run_id, load_trace, persist_trace, run_pipeline, write_atomic, Corruption, NodeSnapshot,
    RunTrace, TraceError, TRACE_FORMAT,
};
mod provenance;

pub use provenance::{
    Answer, LoadedRun, Method, ProvenanceRequest, RunSummary, Served, StoreError, StreamEnd,
    StreamSummary, TraceStore, DATA_DIR_ENV, DEFAULT_AUDIT_RATE, DEFAULT_DATA_DIR,
};
