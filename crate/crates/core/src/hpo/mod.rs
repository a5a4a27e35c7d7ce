//! Multi-objective architecture search: maximize validation accuracy,
//! minimize FLOPs, subject to a minimum accuracy.

mod front;
mod hv;
mod sampler;
mod space;
mod store;
mod study;
mod trial;

pub use front::{crowding_distance, front_table, nondominated_sort, pareto_front, select_tiny};
pub use hv::{hv_at, hv_curve, hypervolume, Normalization, HV_CHECKPOINTS};
pub use sampler::{make_sampler, NsgaConfig, NsgaState, RandomSampler, Sampler, SamplerKind};
pub use space::{ConfigPoint, Genes, SearchSpace, DIM_HEADS, DROPOUTS, NUM_TRANSFORMERS};
pub use store::{read_trials, TrialStore};
pub use study::{run_study, Evaluator, StudyConfig, StudyReport, SyntheticObjective, TrainingEvaluator};
pub use trial::{constrained_dominates, dominates, Objectives, Trial, TrialStatus, FEASIBLE_ACCURACY};

#[cfg(test)]
mod tests;
