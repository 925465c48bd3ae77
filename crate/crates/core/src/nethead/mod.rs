//! The trainable model downstream of the encoder.
//!
//! Frame embeddings are pooled (elementwise max plus mean over frames) into
//! a fixed vector, optionally concatenated with a listener embedding, passed
//! through one ReLU hidden layer, and projected per task: MOS mean, MOS
//! log-variance, STOI, SNR, and noise-class logits. The hidden activation
//! doubles as the PLDA feature vector.
//!
//! Training uses exact backpropagation (verified against central finite
//! differences), the LAMB optimizer, a Noam warmup schedule, and early
//! stopping on the development SRCC. All math runs in f64 with parameters
//! kept on the f32 grid so checkpoints round-trip bit-exactly.

mod checkpoint;
mod gradcheck;
mod loss;
mod model;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{gradcheck_seed, gradcheck_suite, GradcheckReport, GradcheckSeedResult};
pub use loss::{
    cross_entropy, loss_clipped_logcosh, loss_contrastive, loss_gauss, loss_total, loss_value,
    softmax, HeadGrads, LossBreakdown, LossItem, LossParams, LossWeights,
};
pub use model::{pool, HeadOutputs, ListenerTable, PredictorHead, Projection};
pub use optim::{lamb_step, noam_lr, LambParams, LambState};
pub use train::{
    train, DevUtterance, EarlyStopper, EpochLog, StopDecision, TrainData, TrainOutcome,
    TrainUtterance,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("empty embedding sequence")]
    EmptySequence,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("listener id given but the head has no listener table")]
    ListenerWithoutTable,
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("split {split:?} is empty")]
    EmptySplit { split: &'static str },
    #[error(transparent)]
    Batch(#[from] crate::batching::BatchError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
