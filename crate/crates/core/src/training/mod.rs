//! AdamW, learning-rate schedules, the training loop with early stopping,
//! and evaluation metrics.

mod metrics;
mod optim;
mod schedule;
mod trainer;

pub use metrics::{evaluate, predict_all, roc_auc, EvalReport, EVAL_CHUNK};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::{cosine_lr, plateau_lr, OneCycle, Plateau, PlateauConfig, Scheduler, IMPROVEMENT};
pub use trainer::{
    read_history, train, write_history, EpochRecord, TrainConfig, TrainOutcome, FINAL_PATIENCE,
    HPO_PATIENCE,
};
