//! Ground truth from multi-reader annotations, binary and rank metrics,
//! bootstrap statistics, and the metric tables emitted by `evaluate`.

mod bootstrap;
mod ground_truth;
mod kendall;
mod metrics;
mod table;

use thiserror::Error;

pub use bootstrap::{
    bootstrap_ci, p_marker, paired_bootstrap, percentile, BinaryScorer, BootstrapConfig, Estimate,
    PairedOutcome, Scorer, Stratum, TauScorer, DEFAULT_ITERATIONS,
};
pub use ground_truth::{
    build_ground_truth, group_by_cell, human_eval_subset, majority_vote, max_urgency_per_organ, mean_urgency,
    min_positive_filter, prevalence_table, CellKey, GroundTruth, GroundTruthSet, HumanEvalCell,
};
pub use kendall::kendall_tau_b;
pub use metrics::{harmonic_mean, macro_aggregate, micro_aggregate, BinaryScores, Confusion, Metric};
pub use table::{
    evaluate, Aggregation, EvalOptions, LabelerInput, MetricsRow, MetricsTable, PrevalenceRow, TableKind,
    DEFAULT_MIN_POSITIVE, HUMAN_AVERAGE,
};

pub use crate::labels_io::AnnotatorRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("undefined: {0}")]
    Undefined(String),
}
