//! Utterance- and system-level evaluation: MSE, Spearman (SRCC), Pearson
//! (PCC) and Kendall tau-b (KTAU) with tie handling, prediction ensembling,
//! and the annotator-subsampling analysis.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::UtteranceRecord;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("degenerate input: {reason}")]
    DegenerateInput { reason: String },
    #[error("prediction for unknown utt_id {utt_id:?}")]
    MissingRecord { utt_id: String },
    #[error("record {utt_id:?} has no MOS label")]
    MissingLabel { utt_id: String },
    #[error("prediction sets cover different utterances (e.g. {example:?})")]
    KeyMismatch { example: String },
    #[error("need at least {need} prediction sets, got {got}")]
    TooFewMembers { need: usize, got: usize },
    #[error("utterance {utt_id:?} has {got} ratings, need at least {need}")]
    NotEnoughRatings {
        utt_id: String,
        got: usize,
        need: usize,
    },
    #[error("k must be in 1..=4, got {k}")]
    BadSubsampleSize { k: usize },
}

/// Evaluation granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Utterance,
    System,
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Utterance => "utterance",
            Level::System => "system",
        })
    }
}

/// Metric bundle for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub level: Level,
    pub mse: f64,
    pub srcc: f64,
    pub pcc: f64,
    pub ktau: f64,
    pub n: usize,
}

/// Per-utterance predictions of one model: `utt_id -> (mos, variance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub model_id: String,
    pub predictions: BTreeMap<String, (f64, Option<f64>)>,
}

/// Mean squared difference.
pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != targets.len() {
        return Err(MetricError::LengthMismatch {
            left: preds.len(),
            right: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricError::Empty);
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(MetricError::DegenerateInput {
            reason: "constant sequence".into(),
        });
    }
    Ok(())
}

/// Average ranks (1-based); tied values receive the mean of their rank
/// positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    pcc(&average_ranks(x), &average_ranks(y))
}

/// Kendall tau-b (tie-corrected pair counting).
pub fn ktau(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    let n = x.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                ties_x += 1;
                ties_y += 1;
            } else if dx == 0.0 {
                ties_x += 1;
            } else if dy == 0.0 {
                ties_y += 1;
            } else if dx * dy > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = (((n0 - ties_x) as f64) * ((n0 - ties_y) as f64)).sqrt();
    if denom == 0.0 {
        return Err(MetricError::DegenerateInput {
            reason: "all pairs tied".into(),
        });
    }
    Ok((concordant - discordant) as f64 / denom)
}

/// Averages predictions and true MOS per system. Returns parallel vectors
/// sorted by system_id.
pub fn system_aggregate(
    preds: &PredictionSet,
    records: &[UtteranceRecord],
) -> Result<(Vec<f64>, Vec<f64>), MetricError> {
    let by_id: BTreeMap<&str, &UtteranceRecord> =
        records.iter().map(|r| (r.utt_id.as_str(), r)).collect();
    let mut per_system: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for (utt_id, (pred, _)) in &preds.predictions {
        let record = by_id
            .get(utt_id.as_str())
            .ok_or_else(|| MetricError::MissingRecord {
                utt_id: utt_id.clone(),
            })?;
        let mos = record.mos.ok_or_else(|| MetricError::MissingLabel {
            utt_id: utt_id.clone(),
        })?;
        let entry = per_system
            .entry(record.system_id.as_str())
            .or_insert((0.0, 0.0, 0));
        entry.0 += pred;
        entry.1 += mos;
        entry.2 += 1;
    }
    let mut pred_means = Vec::with_capacity(per_system.len());
    let mut true_means = Vec::with_capacity(per_system.len());
    for (_, (p, t, c)) in per_system {
        pred_means.push(p / c as f64);
        true_means.push(t / c as f64);
    }
    Ok((pred_means, true_means))
}

/// Computes MSE/SRCC/PCC/KTAU at the requested level.
pub fn evaluate(
    preds: &PredictionSet,
    records: &[UtteranceRecord],
    level: Level,
) -> Result<EvalReport, MetricError> {
    let (p, t) = match level {
        Level::System => system_aggregate(preds, records)?,
        Level::Utterance => {
            let by_id: BTreeMap<&str, &UtteranceRecord> =
                records.iter().map(|r| (r.utt_id.as_str(), r)).collect();
            let mut p = Vec::with_capacity(preds.predictions.len());
            let mut t = Vec::with_capacity(preds.predictions.len());
            for (utt_id, (pred, _)) in &preds.predictions {
                let record =
                    by_id
                        .get(utt_id.as_str())
                        .ok_or_else(|| MetricError::MissingRecord {
                            utt_id: utt_id.clone(),
                        })?;
                let mos = record.mos.ok_or_else(|| MetricError::MissingLabel {
                    utt_id: utt_id.clone(),
                })?;
                p.push(*pred);
                t.push(mos);
            }
            (p, t)
        }
    };
    Ok(EvalReport {
        level,
        mse: mse(&p, &t)?,
        srcc: srcc(&p, &t)?,
        pcc: pcc(&p, &t)?,
        ktau: ktau(&p, &t)?,
        n: p.len(),
    })
}

/// Per-utterance arithmetic mean of member predictions. Variances combine
/// with the mixture formula when every member provides one.
pub fn ensemble(sets: &[PredictionSet]) -> Result<PredictionSet, MetricError> {
    if sets.is_empty() {
        return Err(MetricError::TooFewMembers { need: 1, got: 0 });
    }
    let keys: BTreeSet<&String> = sets[0].predictions.keys().collect();
    for set in &sets[1..] {
        let other: BTreeSet<&String> = set.predictions.keys().collect();
        if keys != other {
            let example = keys
                .symmetric_difference(&other)
                .next()
                .map(|s| (*s).clone())
                .unwrap_or_default();
            return Err(MetricError::KeyMismatch { example });
        }
    }

    let k = sets.len() as f64;
    let mut predictions = BTreeMap::new();
    for utt_id in keys {
        let members: Vec<(f64, Option<f64>)> = sets.iter().map(|s| s.predictions[utt_id]).collect();
        let mean = members.iter().map(|(p, _)| p).sum::<f64>() / k;
        let variance = if members.iter().all(|(_, v)| v.is_some()) {
            let second_moment = members.iter().map(|(p, v)| v.unwrap() + p * p).sum::<f64>() / k;
            Some((second_moment - mean * mean).max(0.0))
        } else {
            None
        };
        predictions.insert(utt_id.clone(), (mean, variance));
    }
    let model_id = format!(
        "ensemble({})",
        sets.iter()
            .map(|s| s.model_id.as_str())
            .collect::<Vec<_>>()
            .join("+")
    );
    Ok(PredictionSet {
        model_id,
        predictions,
    })
}

/// All leave-one-out ensembles: element i averages every member except i.
pub fn leave_one_out_ensembles(sets: &[PredictionSet]) -> Result<Vec<PredictionSet>, MetricError> {
    if sets.len() < 2 {
        return Err(MetricError::TooFewMembers {
            need: 2,
            got: sets.len(),
        });
    }
    (0..sets.len())
        .map(|omit| {
            let members: Vec<PredictionSet> = sets
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != omit)
                .map(|(_, s)| s.clone())
                .collect();
            let mut e = ensemble(&members)?;
            e.model_id = format!("loo-without-{}", sets[omit].model_id);
            Ok(e)
        })
        .collect()
}

/// One trial of the annotator-subsampling analysis.
#[derive(Debug, Clone)]
pub struct AnnotatorTrial {
    pub trial: usize,
    pub utterance_mse: f64,
    /// None when the trial's ground truths are constant (SRCC undefined).
    pub utterance_srcc: Option<f64>,
    pub system_mse: f64,
    pub system_srcc: Option<f64>,
}

/// Result of [`annotator_subsample_analysis`]: the per-trial metric
/// distributions.
#[derive(Debug, Clone)]
pub struct AnnotatorAnalysis {
    pub k: usize,
    pub trials: Vec<AnnotatorTrial>,
}

impl AnnotatorAnalysis {
    /// Mean and standard deviation over trials of `(utterance mse,
    /// utterance srcc, system mse, system srcc)` where defined.
    pub fn summary(&self) -> [(f64, f64); 4] {
        let collect = |f: &dyn Fn(&AnnotatorTrial) -> Option<f64>| {
            let values: Vec<f64> = self.trials.iter().filter_map(f).collect();
            mean_std(&values)
        };
        [
            collect(&|t| Some(t.utterance_mse)),
            collect(&|t| t.utterance_srcc),
            collect(&|t| Some(t.system_mse)),
            collect(&|t| t.system_srcc),
        ]
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Compares small annotator groups against held-out annotators.
///
/// Per trial, each utterance's eight ratings (a seeded sample of eight when
/// more are available) are split into a ground-truth half and a candidate
/// pool of four; the "prediction" is the mean of `k` ratings sampled from
/// the pool and the ground truth is the mean of the other four. Utterance-
/// and system-level MSE/SRCC are recorded per trial.
pub fn annotator_subsample_analysis(
    records: &[UtteranceRecord],
    k: usize,
    n_trials: usize,
    seed: u64,
) -> Result<AnnotatorAnalysis, MetricError> {
    if !(1..=4).contains(&k) {
        return Err(MetricError::BadSubsampleSize { k });
    }
    for r in records {
        if r.listener_ratings.len() < 8 {
            return Err(MetricError::NotEnoughRatings {
                utt_id: r.utt_id.clone(),
                got: r.listener_ratings.len(),
                need: 8,
            });
        }
    }
    if records.is_empty() {
        return Err(MetricError::Empty);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let mut preds = Vec::with_capacity(records.len());
        let mut truths = Vec::with_capacity(records.len());
        let mut systems: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
        for r in records {
            let mut ratings: Vec<f64> = r
                .listener_ratings
                .iter()
                .map(|(_, v)| f64::from(*v))
                .collect();
            ratings.shuffle(&mut rng);
            ratings.truncate(8);
            let truth = ratings[0..4].iter().sum::<f64>() / 4.0;
            let mut pool = ratings[4..8].to_vec();
            pool.shuffle(&mut rng);
            let pred = pool[0..k].iter().sum::<f64>() / k as f64;
            preds.push(pred);
            truths.push(truth);
            let entry = systems.entry(r.system_id.as_str()).or_insert((0.0, 0.0, 0));
            entry.0 += pred;
            entry.1 += truth;
            entry.2 += 1;
        }
        let sys_preds: Vec<f64> = systems.values().map(|(p, _, c)| p / *c as f64).collect();
        let sys_truths: Vec<f64> = systems.values().map(|(_, t, c)| t / *c as f64).collect();
        trials.push(AnnotatorTrial {
            trial,
            utterance_mse: mse(&preds, &truths)?,
            utterance_srcc: srcc(&preds, &truths).ok(),
            system_mse: mse(&sys_preds, &sys_truths)?,
            system_srcc: srcc(&sys_preds, &sys_truths).ok(),
        });
    }
    Ok(AnnotatorAnalysis { k, trials })
}
