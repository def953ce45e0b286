//! Domain-balanced mini-batch sampling, the Adam training loop and
//! recording-level evaluation metrics.

mod metrics;
mod sampler;
mod trainer;

use alloc::string::String;

use thiserror::Error;

pub use metrics::{evaluate, evaluate_detailed, macc, Confusion, EvalReport, RecordingPrediction};
pub use sampler::{effective_batch_size, iterations_per_epoch, DomainQueueSet, UniformSampler};
pub use trainer::{
    train, train_observed, train_step, EpochRecord, IterationRecord, IterationRule, StepStats,
    TrainConfig, TrainOutcome, TrainTrace,
};

use crate::autodiff::AutodiffError;
use crate::frontend::FrontendError;
use crate::model::{Label, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("domain {domain} has no {label} samples, so its queue would be empty")]
    EmptyQueue { domain: usize, label: Label },
    #[error("batch size {batch_size} gives B_eff = 0 with {n_queues} (domain, class) queues; use at least {n_queues}")]
    BatchTooSmall { batch_size: usize, n_queues: usize },
    #[error("non-finite loss at iteration {iteration} (lr {lr:e}, gradient norm {grad_norm:e})")]
    NonFinite {
        iteration: usize,
        lr: f64,
        grad_norm: f64,
    },
    #[error("recording {0} mixes labels or domains across its cycles")]
    InconsistentRecording(String),
    #[error("reference domain {0} has no training cycles")]
    ReferenceDomain(usize),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
}
