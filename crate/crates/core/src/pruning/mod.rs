//! Structured pruning: channel groups from a dependency graph, first-order
//! Taylor importance, global ranking and iterative fine-tuning.

mod graph;
mod pipeline;
mod score;

pub use graph::{apply_removal, build_dep_graph, shrink, DependencyGraph, Entry, GroupKind, PruneGroup, MIN_HEAD_DIM};
pub use pipeline::{
    flop_target, metrics, prune_pipeline, prune_step, ModelMetrics, PruneConfig, PruneReport, PruneStepRecord,
    Quota, QuotaKind, StepOutcome,
};
pub use score::{accumulate_grads, group_scores, taylor_scores, SCORE_BATCHES};
