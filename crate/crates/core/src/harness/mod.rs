//! Synthetic operators, ground-truth oracle, retrieval baselines and
//! evaluation metrics.

mod baseline;
mod matrix;
mod metrics;
mod ops;
mod oracle;
mod suite;
mod synth;

pub use baseline::{baseline_retrieval, tokenize, BaselineMode};
pub use matrix::{chain_cases, instance_matrix, ChainCase, MatrixInstance};
pub use metrics::{
    compute_metrics, coverage, miset_coverage, record_coverage, MetricError, MetricReport,
};
pub use ops::{field_of, score_of, SyntheticOpSpec};
pub use oracle::{
    brute_force_pall, oracle_impact, oracle_intersection, oracle_union, DEFAULT_MAX_N,
};
pub use suite::{
    check_matrix, threshold_family, threshold_instance, BenchError, FamilyRow, InstanceCheck,
};
pub use synth::{
    generate_synthetic_run, template_config, valid_address, PlantedError, PlantedTruth,
    SyntheticRun, SyntheticRunSpec, Template,
};
