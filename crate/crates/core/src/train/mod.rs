//! Training harness: the noisy-label losses, the SGD loop with early
//! stopping, evaluation, and end-to-end experiments.
//!
//! Training code receives a [`TrainingView`](crate::data::TrainingView),
//! which carries only the noisy labels; clean labels are reachable only
//! from evaluation.

mod config;
mod experiment;
mod loss;
mod report;
mod trainer;

pub use config::{
    TrainingConfig, Variant, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_HEAD_INIT_DIAGONAL, DEFAULT_KEEP_PROB, DEFAULT_LR, DEFAULT_TRACE_LR,
    DEFAULT_PATIENCE, LAMBDA_GRID, MAX_EPOCHS,
};
pub use experiment::*;
pub use loss::{loss_base, loss_softmax_dropout, loss_trace, loss_true_noise, LossOutput, LOG_FLOOR};
pub use report::*;
pub use trainer::{
    evaluate, noisy_log_loss, train, train_observed, EarlyStopping, EpochRecord, NoiseHeadParams, StopDecision, TrainedModel,
};
