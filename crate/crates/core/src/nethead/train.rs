//! The training recipe: bucketed batches, multi-task loss, LAMB with Noam
//! warmup, per-epoch dev evaluation, and early stopping on dev SRCC.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{loss_total, LossItem, LossParams, LossWeights};
use super::model::PredictorHead;
use super::optim::{lamb_step, noam_lr, LambParams, LambState};
use super::NetError;
use crate::augment::{augment_clip, NoiseTable};
use crate::batching::{draw_batches, make_buckets_from_durations, Variant};
use crate::config::{EarlyStopLevel, RunConfig};
use crate::dataset::AudioClip;
use crate::metrics::{mse, srcc};

/// One training utterance with everything the loop needs. The pooled vector
/// is precomputed once; audio is optional and only used to draw noisy-variant
/// supervision.
#[derive(Debug, Clone)]
pub struct TrainUtterance {
    pub utt_id: String,
    pub duration_s: f64,
    pub pooled: DVector<f64>,
    pub mos: f64,
    pub stoi: Option<f64>,
    pub ratings: Vec<(String, u8)>,
    pub audio: Option<AudioClip>,
}

#[derive(Debug, Clone)]
pub struct DevUtterance {
    pub utt_id: String,
    pub system_id: String,
    pub pooled: DVector<f64>,
    pub mos: f64,
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<TrainUtterance>,
    pub dev: Vec<DevUtterance>,
}

/// Per-epoch log row. Train losses are means over the epoch's batches;
/// metrics the monitored level cannot produce are NaN.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub lr: f64,
    pub train_total: f64,
    pub train_mos: f64,
    pub train_contrast: f64,
    pub train_stoi: f64,
    pub train_snr: f64,
    pub train_noise: f64,
    pub dev_utt_srcc: f64,
    pub dev_utt_mse: f64,
    pub dev_sys_srcc: f64,
    pub dev_sys_mse: f64,
    pub best_srcc: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The best-dev-SRCC checkpoint, not the last epoch.
    pub head: PredictorHead,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_srcc: f64,
}

/// Early stopping on a maximized metric: strict improvement resets the
/// counter; `patience` consecutive non-improvements stop the run.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, value: f64) -> StopDecision {
        let improved = !value.is_nan() && self.best.is_none_or(|b| value > b);
        if improved {
            self.best = Some(value);
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// SplitMix64 mix of a base seed and a stream tag.
fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dev metrics of a prediction vector: `(utt_srcc, utt_mse, sys_srcc,
/// sys_mse)`. The monitored level is strict; the other level falls back to
/// NaN when degenerate.
fn dev_metrics(
    dev: &[DevUtterance],
    preds: &[f64],
    monitored: EarlyStopLevel,
) -> Result<(f64, f64, f64, f64), NetError> {
    let targets: Vec<f64> = dev.iter().map(|d| d.mos).collect();
    let utt_mse = mse(preds, &targets)?;
    let utt_srcc = match monitored {
        EarlyStopLevel::Utterance => srcc(preds, &targets)?,
        EarlyStopLevel::System => srcc(preds, &targets).unwrap_or(f64::NAN),
    };

    let mut systems: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for (d, p) in dev.iter().zip(preds) {
        let entry = systems.entry(d.system_id.as_str()).or_insert((0.0, 0.0, 0));
        entry.0 += p;
        entry.1 += d.mos;
        entry.2 += 1;
    }
    let sys_preds: Vec<f64> = systems.values().map(|(p, _, c)| p / *c as f64).collect();
    let sys_targets: Vec<f64> = systems.values().map(|(_, t, c)| t / *c as f64).collect();
    let sys_mse = mse(&sys_preds, &sys_targets)?;
    let sys_srcc = match monitored {
        EarlyStopLevel::System => srcc(&sys_preds, &sys_targets)?,
        EarlyStopLevel::Utterance => srcc(&sys_preds, &sys_targets).unwrap_or(f64::NAN),
    };
    Ok((utt_srcc, utt_mse, sys_srcc, sys_mse))
}

/// Trains a head from scratch. Deterministic given `config.seed`
/// (single-threaded math, seeded shuffles and augmentation draws).
pub fn train(
    data: &TrainData,
    noise_table: Option<&NoiseTable>,
    config: &RunConfig,
) -> Result<TrainOutcome, NetError> {
    if data.train.is_empty() {
        return Err(NetError::EmptySplit { split: "train" });
    }
    if data.dev.is_empty() {
        return Err(NetError::EmptySplit { split: "dev" });
    }
    let input_dim = data.train[0].pooled.len();
    let train_dims = data.train.iter().map(|u| u.pooled.len());
    let dev_dims = data.dev.iter().map(|d| d.pooled.len());
    for got in train_dims.chain(dev_dims) {
        if got != input_dim {
            return Err(NetError::DimensionMismatch {
                expected: input_dim,
                got,
            });
        }
    }

    let kept: Vec<&TrainUtterance> = data
        .train
        .iter()
        .filter(|u| u.duration_s >= config.min_duration_s && u.duration_s <= config.max_duration_s)
        .collect();
    if kept.is_empty() {
        return Err(NetError::EmptySplit { split: "train" });
    }
    let by_id: BTreeMap<&str, &TrainUtterance> =
        kept.iter().map(|u| (u.utt_id.as_str(), *u)).collect();
    let durations: Vec<(String, f64)> = kept
        .iter()
        .map(|u| (u.utt_id.clone(), u.duration_s))
        .collect();
    let buckets = make_buckets_from_durations(&durations, config.n_buckets)?;

    let listener_shape = config.listener_dependent.then(|| {
        let mut ids: Vec<String> = kept
            .iter()
            .flat_map(|u| u.ratings.iter().map(|(id, _)| id.clone()))
            .collect();
        ids.sort();
        ids.dedup();
        (ids, config.listener_emb_dim)
    });

    let n_noise_classes = noise_table.map_or(1, |t| t.n_classes().max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let mut head = PredictorHead::init(
        input_dim,
        config.hidden_dim,
        n_noise_classes,
        listener_shape,
        &mut rng,
    );
    // center the regression head at the label mean; LAMB's trust ratio makes
    // updates proportional to the current parameter norm, so starting the
    // bias at zero would waste most of the step budget crossing to ~3
    let mean_mos = kept.iter().map(|u| u.mos).sum::<f64>() / kept.len() as f64;
    head.mos_mean.b = mean_mos;
    head.quantize_f32();

    let loss_params = LossParams {
        kind: config.mos_loss,
        tau: config.tau,
        margin: config.margin,
        weights: LossWeights {
            mos: config.w_mos,
            contrast: config.w_contrast,
            stoi: config.w_stoi,
            snr: config.w_snr,
            noise: config.w_noise,
        },
    };
    let lamb = LambParams {
        weight_decay: config.weight_decay,
        ..LambParams::default()
    };
    let group_sizes: Vec<usize> = head.params().iter().map(|g| g.len()).collect();
    let mut state = LambState::new(&group_sizes);
    let aug_config = config.augment_config();

    let mut stopper = EarlyStopper::new(config.patience);
    let mut best_head = head.clone();
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let mut step = 0u64;

    for epoch in 1..=config.max_epochs {
        let batches = draw_batches(
            &buckets,
            derive_seed(config.seed, 2 * epoch as u64),
            config.batch_clean_seconds,
        )?;
        let mut item_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2 * epoch as u64 + 1));

        let mut sums = [0.0; 6];
        let mut last_lr = 0.0;
        for (batch_index, batch) in batches.iter().enumerate() {
            let mut items = Vec::with_capacity(batch.items.len());
            for (utt_id, variant) in &batch.items {
                let utt = by_id[utt_id.as_str()];
                let mut item = LossItem {
                    pooled: utt.pooled.clone(),
                    mos: utt.mos,
                    variant: *variant,
                    stoi: utt.stoi,
                    snr: None,
                    noise_class: None,
                    listener: None,
                };
                if *variant == Variant::Noisy && config.augment {
                    if let (Some(table), Some(audio)) = (noise_table, &utt.audio) {
                        let pair = augment_clip(audio, table, &aug_config, &mut item_rng)?;
                        item.snr = Some(pair.snr_db);
                        item.noise_class = Some(pair.noise_class);
                    }
                }
                if let Some(listeners) = &head.listeners {
                    if !utt.ratings.is_empty() {
                        let (id, rating) =
                            &utt.ratings[item_rng.random_range(0..utt.ratings.len())];
                        item.listener = Some((listeners.row_for(id), f64::from(*rating)));
                    }
                }
                items.push(item);
            }

            let (breakdown, grads) = loss_total(&head, &items, &loss_params)?;
            if !breakdown.total.is_finite() {
                let ids: Vec<&str> = batch.items.iter().map(|(id, _)| id.as_str()).collect();
                return Err(NetError::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    detail: format!("loss {:?} on utterances {ids:?}", breakdown.total),
                });
            }
            step += 1;
            last_lr = noam_lr(step, config.base_lr, config.warmup_steps);
            let grad_groups = grads.params();
            let mut param_groups = head.params_mut();
            lamb_step(&mut param_groups, &grad_groups, &mut state, last_lr, &lamb);
            drop(param_groups);
            head.quantize_f32();

            for (s, v) in sums.iter_mut().zip([
                breakdown.total,
                breakdown.mos,
                breakdown.contrastive,
                breakdown.stoi,
                breakdown.snr,
                breakdown.noise,
            ]) {
                *s += v;
            }
        }
        let nb = batches.len() as f64;

        let preds: Vec<f64> = data
            .dev
            .iter()
            .map(|d| head.forward(&d.pooled, None).map(|o| o.mos_mean))
            .collect::<Result<_, _>>()?;
        let (utt_srcc, utt_mse, sys_srcc, sys_mse) =
            dev_metrics(&data.dev, &preds, config.early_stop_level)?;
        let monitored = match config.early_stop_level {
            EarlyStopLevel::Utterance => utt_srcc,
            EarlyStopLevel::System => sys_srcc,
        };

        let decision = stopper.observe(monitored);
        if decision == StopDecision::Improved {
            best_head = head.clone();
            best_epoch = epoch;
        }
        log.push(EpochLog {
            epoch,
            steps: step,
            lr: last_lr,
            train_total: sums[0] / nb,
            train_mos: sums[1] / nb,
            train_contrast: sums[2] / nb,
            train_stoi: sums[3] / nb,
            train_snr: sums[4] / nb,
            train_noise: sums[5] / nb,
            dev_utt_srcc: utt_srcc,
            dev_utt_mse: utt_mse,
            dev_sys_srcc: sys_srcc,
            dev_sys_mse: sys_mse,
            best_srcc: stopper.best().unwrap_or(f64::NAN),
        });
        log::info!(
            "epoch {epoch}: train {:.4}, dev srcc {:.4} (best {:.4})",
            sums[0] / nb,
            monitored,
            stopper.best().unwrap_or(f64::NAN)
        );
        if decision == StopDecision::Stop {
            break;
        }
    }

    Ok(TrainOutcome {
        head: best_head,
        best_epoch,
        best_srcc: stopper.best().unwrap_or(f64::NAN),
        log,
    })
}
