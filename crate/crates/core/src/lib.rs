//! MOS prediction toolkit.
//!
//! Implements the full pipeline downstream of a pretrained speech encoder:
//!
//! - [`dataset`]: manifests, listener ratings, auxiliary targets, frame
//!   embeddings (MNEB files) and 16-bit PCM WAV audio.
//! - [`augment`]: volume/tempo perturbation and noise mixing at a requested
//!   SNR, producing clean/noisy training pairs with auto-generated
//!   supervision (SNR value, noise class).
//! - [`batching`]: duration filtering, quantile bucketing, and greedy batch
//!   packing under a clean-audio time budget.
//! - [`nethead`]: the trainable head (global pooling, one hidden layer,
//!   per-task projections, optional listener embeddings) with exact
//!   backpropagation, LAMB optimization and a Noam warmup schedule.
//! - [`binning`]: equal-count MOS bins and posterior-weighted MOS recovery.
//! - [`plda`]: two-covariance PLDA over head features with posterior
//!   predictive scoring.
//! - [`metrics`]: MSE/SRCC/PCC/KTAU at utterance and system level,
//!   ensembling, and annotator-subsampling analysis.
//! - [`config`]: run configuration with validated hyperparameters.
//! - [`pipeline`]: file-to-file orchestration used by the CLI.
//! - [`synth`]: synthetic dataset generation for demos and tests.

pub mod augment;
pub mod batching;
pub mod binning;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod nethead;
pub mod pipeline;
pub mod plda;
pub mod synth;

pub use config::RunConfig;
pub use dataset::{AudioClip, Dataset, EmbeddingSequence, Split, UtteranceRecord};
