//! Optimisers, learning-rate schedules and the three fine-tuning phase drivers.

mod data;
mod metrics;
mod optim;
mod phases;
mod schedule;

pub use data::{batchify, lm_stream, lm_windows, LmWindow};
pub use metrics::{EpochMetrics, MetricsLog};
pub use optim::{adam_step, clip_grad_norm, sgd_step, AdamMoments, Optimizer, OptimizerKind};
pub use phases::{
    evaluate_lm, finetune_classifier, finetune_lm, pretrain_lm, train_classifier, LmEval,
    Phase, PhaseConfig, PretrainOutcome, Stage,
};
pub use schedule::{discriminative_lrs, one_cycle, OneCycleConfig};
