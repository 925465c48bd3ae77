//! Run configuration.
//!
//! A flat key-value TOML file with command-line overrides layered on top by
//! the CLI (flags win). Every field is validated against its documented
//! range at load, and each run echoes the fully-resolved configuration
//! beside its outputs so results stay reproducible from artifacts alone.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Level;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which loss supervises the MOS mean head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MosLossKind {
    /// Gaussian negative log-likelihood with a predicted log-variance.
    Gauss,
    /// Clipped log-cosh point loss.
    LogCosh,
}

/// Granularity of the early-stopping SRCC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopLevel {
    Utterance,
    System,
}

impl From<EarlyStopLevel> for Level {
    fn from(l: EarlyStopLevel) -> Level {
        match l {
            EarlyStopLevel::Utterance => Level::Utterance,
            EarlyStopLevel::System => Level::System,
        }
    }
}

/// All tunables with their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // optimization
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,

    // model
    pub hidden_dim: usize,
    pub listener_dependent: bool,
    pub listener_emb_dim: usize,

    // losses
    pub mos_loss: MosLossKind,
    pub tau: f64,
    pub margin: f64,
    pub w_mos: f64,
    pub w_contrast: f64,
    pub w_stoi: f64,
    pub w_snr: f64,
    pub w_noise: f64,

    // binning / PLDA
    pub n_bins: usize,
    pub min_bin_count: usize,

    // augmentation
    pub augment: bool,
    pub volume_prob: f64,
    pub volume_min: f64,
    pub volume_max: f64,
    pub tempo_min: f64,
    pub tempo_max: f64,
    pub tempo_step: f64,
    pub snr_min: f64,
    pub snr_max: f64,

    // batching
    pub batch_clean_seconds: f64,
    pub n_buckets: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,

    // evaluation
    pub early_stop_level: EarlyStopLevel,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            base_lr: 0.001,
            warmup_steps: 1500,
            weight_decay: 0.0001,
            patience: 30,
            max_epochs: 90,
            hidden_dim: 32,
            listener_dependent: false,
            listener_emb_dim: 32,
            mos_loss: MosLossKind::Gauss,
            tau: 0.25,
            margin: 0.1,
            w_mos: 1.0,
            w_contrast: 0.5,
            w_stoi: 0.1,
            w_snr: 0.1,
            w_noise: 0.1,
            n_bins: 32,
            min_bin_count: 5,
            augment: true,
            volume_prob: 0.8,
            volume_min: 0.5,
            volume_max: 2.0,
            tempo_min: 0.9,
            tempo_max: 1.08,
            tempo_step: 0.001,
            snr_min: 10.0,
            snr_max: 20.0,
            batch_clean_seconds: 40.0,
            n_buckets: 20,
            min_duration_s: 1.0,
            max_duration_s: 12.0,
            early_stop_level: EarlyStopLevel::System,
        }
    }
}

impl RunConfig {
    /// Loads and validates a TOML config file. Missing keys take their
    /// defaults; unknown keys are rejected.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Serializes the fully-resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid(msg.to_owned()))
            }
        };
        check(self.base_lr > 0.0, "base_lr must be > 0")?;
        check(self.warmup_steps >= 1, "warmup_steps must be >= 1")?;
        check(self.weight_decay >= 0.0, "weight_decay must be >= 0")?;
        check(self.patience >= 1, "patience must be >= 1")?;
        check(self.max_epochs >= 1, "max_epochs must be >= 1")?;
        check(self.hidden_dim >= 1, "hidden_dim must be >= 1")?;
        check(self.listener_emb_dim >= 1, "listener_emb_dim must be >= 1")?;
        check(self.tau >= 0.0, "tau must be >= 0")?;
        check(self.margin >= 0.0, "margin must be >= 0")?;
        check(self.w_mos > 0.0, "w_mos must be > 0")?;
        check(
            self.w_contrast >= 0.0
                && self.w_stoi >= 0.0
                && self.w_snr >= 0.0
                && self.w_noise >= 0.0,
            "loss weights must be >= 0",
        )?;
        check(self.n_bins >= 1, "n_bins must be >= 1")?;
        check(self.min_bin_count >= 1, "min_bin_count must be >= 1")?;
        check(
            (0.0..=1.0).contains(&self.volume_prob),
            "volume_prob must be in [0, 1]",
        )?;
        check(
            self.volume_min > 0.0 && self.volume_min <= self.volume_max,
            "volume range must satisfy 0 < min <= max",
        )?;
        check(
            self.tempo_min > 0.0 && self.tempo_min <= self.tempo_max,
            "tempo range must satisfy 0 < min <= max",
        )?;
        check(self.tempo_step > 0.0, "tempo_step must be > 0")?;
        check(
            self.snr_min <= self.snr_max,
            "snr range must satisfy min <= max",
        )?;
        check(
            self.batch_clean_seconds > 0.0,
            "batch_clean_seconds must be > 0",
        )?;
        check(self.n_buckets >= 1, "n_buckets must be >= 1")?;
        check(
            self.min_duration_s > 0.0 && self.min_duration_s <= self.max_duration_s,
            "duration filter must satisfy 0 < min <= max",
        )?;
        Ok(())
    }

    /// The augmentation knobs as an [`crate::augment::AugmentConfig`].
    pub fn augment_config(&self) -> crate::augment::AugmentConfig {
        crate::augment::AugmentConfig {
            volume_prob: self.volume_prob,
            volume_range: (self.volume_min, self.volume_max),
            tempo_grid: crate::augment::tempo_grid(self.tempo_min, self.tempo_max, self.tempo_step),
            snr_range: (self.snr_min, self.snr_max),
        }
    }
}
