//! File-to-file orchestration of the toolkit's commands: training, PLDA
//! fitting, prediction, evaluation, ensembling, annotator analysis, gradient
//! checking, and augmentation preview. Every run is reproducible from its
//! flags plus seed; training writes the fully-resolved config beside its
//! outputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::augment::{augment_clip, load_noise_table, realized_snr_db, AugmentError};
use crate::batching::BatchError;
use crate::binning::{assign_bin, fit_bins, BinError};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{
    load_audio, load_embedding, write_audio, Dataset, DatasetError, Split, UtteranceRecord,
};
use crate::metrics::{
    annotator_subsample_analysis, ensemble, evaluate, AnnotatorAnalysis, EvalReport, Level,
    MetricError, PredictionSet,
};
use crate::nethead::{
    gradcheck_suite, load_checkpoint, pool, save_checkpoint, train, DevUtterance, GradcheckReport,
    NetError, PredictorHead, TrainData, TrainOutcome, TrainUtterance,
};
use crate::plda::{fit_plda, load_model, save_model, PldaError, PldaModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Plda(#[from] PldaError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("record {utt_id:?} has no embedding_path")]
    MissingEmbedding { utt_id: String },
    #[error(
        "record {utt_id:?}: audio is {audio_s} s but the manifest says {manifest_s} s \
         (more than one sample period apart)"
    )]
    AudioDurationMismatch {
        utt_id: String,
        manifest_s: f64,
        audio_s: f64,
    },
    #[error("record {utt_id:?} has no MOS label")]
    MissingLabel { utt_id: String },
    #[error("predictions file {path}: line {line}: {reason}")]
    BadPredictions {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 2 usage/config, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Net(NetError::NonFiniteLoss { .. }) => 4,
            PipelineError::Plda(PldaError::SingularWithinClass) => 4,
            PipelineError::Metric(MetricError::DegenerateInput { .. }) => 4,
            PipelineError::Bin(BinError::NotNormalized { .. }) => 4,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn pooled_for(record: &UtteranceRecord) -> Result<DVector<f64>, PipelineError> {
    let path = record
        .embedding_path
        .as_ref()
        .ok_or_else(|| PipelineError::MissingEmbedding {
            utt_id: record.utt_id.clone(),
        })?;
    let emb = load_embedding(path)?;
    Ok(pool(&emb)?)
}

fn require_mos(record: &UtteranceRecord) -> Result<f64, PipelineError> {
    record.mos.ok_or_else(|| PipelineError::MissingLabel {
        utt_id: record.utt_id.clone(),
    })
}

/// Outcome summary of a training run.
#[derive(Debug)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_srcc: f64,
    pub epochs_run: usize,
    pub checkpoint: PathBuf,
    pub log_csv: PathBuf,
    pub config_echo: PathBuf,
}

/// Trains on the manifest's train split, early-stops on dev, and writes the
/// best checkpoint, a per-epoch log CSV, and the resolved config.
pub fn run_train(
    config: &RunConfig,
    manifest: &Path,
    ratings: Option<&Path>,
    aux: Option<&Path>,
    noise_manifest: Option<&Path>,
    out_checkpoint: &Path,
) -> Result<TrainSummary, PipelineError> {
    config.validate()?;
    let dataset = Dataset::load(manifest, ratings, aux)?;
    let noise_table = noise_manifest.map(load_noise_table).transpose()?;

    let mut train_utts = Vec::new();
    for record in dataset.split(Split::Train) {
        let audio = match (&record.audio_path, config.augment && noise_table.is_some()) {
            (Some(path), true) => {
                let clip = load_audio(path)?;
                let period = 1.0 / f64::from(clip.sample_rate);
                if (clip.duration_s() - record.duration_s).abs() > period {
                    return Err(PipelineError::AudioDurationMismatch {
                        utt_id: record.utt_id.clone(),
                        manifest_s: record.duration_s,
                        audio_s: clip.duration_s(),
                    });
                }
                Some(clip)
            }
            _ => None,
        };
        train_utts.push(TrainUtterance {
            utt_id: record.utt_id.clone(),
            duration_s: record.duration_s,
            pooled: pooled_for(record)?,
            mos: require_mos(record)?,
            stoi: record.stoi,
            ratings: record.listener_ratings.clone(),
            audio,
        });
    }
    let mut dev_utts = Vec::new();
    for record in dataset.split(Split::Dev) {
        dev_utts.push(DevUtterance {
            utt_id: record.utt_id.clone(),
            system_id: record.system_id.clone(),
            pooled: pooled_for(record)?,
            mos: require_mos(record)?,
        });
    }

    let data = TrainData {
        train: train_utts,
        dev: dev_utts,
    };
    let outcome: TrainOutcome = train(&data, noise_table.as_ref(), config)?;

    save_checkpoint(out_checkpoint, &outcome.head)?;
    let log_csv = sibling(out_checkpoint, "log.csv");
    write_train_log(&log_csv, &outcome)?;
    let config_echo = sibling(out_checkpoint, "config.toml");
    std::fs::write(&config_echo, config.to_toml()).map_err(io_err(&config_echo))?;

    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        best_srcc: outcome.best_srcc,
        epochs_run: outcome.log.len(),
        checkpoint: out_checkpoint.to_path_buf(),
        log_csv,
        config_echo,
    })
}

fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}

fn write_train_log(path: &Path, outcome: &TrainOutcome) -> Result<(), PipelineError> {
    let mut out = String::from(
        "epoch,steps,lr,train_total,train_mos,train_contrast,train_stoi,train_snr,train_noise,\
         dev_utt_srcc,dev_utt_mse,dev_sys_srcc,dev_sys_mse,best_srcc\n",
    );
    for row in &outcome.log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.epoch,
            row.steps,
            row.lr,
            row.train_total,
            row.train_mos,
            row.train_contrast,
            row.train_stoi,
            row.train_snr,
            row.train_noise,
            row.dev_utt_srcc,
            row.dev_utt_mse,
            row.dev_sys_srcc,
            row.dev_sys_mse,
            row.best_srcc
        ));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Extracts hidden-layer features for the given split and fits the binned
/// PLDA backend.
pub fn run_fit_plda(
    checkpoint: &Path,
    manifest: &Path,
    ratings: Option<&Path>,
    split: Split,
    n_bins: usize,
    min_count: usize,
    out_model: &Path,
) -> Result<PldaModel, PipelineError> {
    let head = load_checkpoint(checkpoint)?;
    let dataset = Dataset::load(manifest, ratings, None)?;
    let records = dataset.split(split);

    let mut mos_values = Vec::new();
    let mut features = Vec::new();
    for record in &records {
        let mos = require_mos(record)?;
        let pooled = pooled_for(record)?;
        let outputs = head.forward(&pooled, None)?;
        mos_values.push(mos);
        features.push(outputs.hidden);
    }
    let spec = fit_bins(&mos_values, n_bins, min_count)?;
    let labeled: Vec<(DVector<f64>, usize)> = features
        .into_iter()
        .zip(&mos_values)
        .map(|(f, mos)| Ok((f, assign_bin(&spec, *mos)?)))
        .collect::<Result<_, BinError>>()?;
    let model = fit_plda(&labeled, spec, min_count)?;
    save_model(out_model, &model)?;
    Ok(model)
}

/// Which scorer produces predictions.
enum Scorer {
    Head(PredictorHead),
    Plda(PredictorHead, Box<PldaModel>),
}

/// Predicts MOS for the manifest's records (optionally one split) and writes
/// the predictions CSV. With a PLDA model, hidden-layer features are scored
/// by the backend; otherwise the head's MOS mean and variance are used.
pub fn run_predict(
    checkpoint: &Path,
    plda_model: Option<&Path>,
    manifest: &Path,
    split: Option<Split>,
    listener: Option<&str>,
    out_csv: &Path,
) -> Result<usize, PipelineError> {
    let head = load_checkpoint(checkpoint)?;
    let scorer = match plda_model {
        Some(path) => Scorer::Plda(head, Box::new(load_model(path)?)),
        None => Scorer::Head(head),
    };
    let dataset = Dataset::load(manifest, None, None)?;
    let records: Vec<&UtteranceRecord> = match split {
        Some(s) => dataset.split(s),
        None => dataset.records.iter().collect(),
    };

    let mut predictions = BTreeMap::new();
    let mut systems = BTreeMap::new();
    for record in &records {
        let pooled = pooled_for(record)?;
        let (mos, variance) = match &scorer {
            Scorer::Head(head) => {
                let out = head.forward(&pooled, listener)?;
                (out.mos_mean, Some(out.mos_logvar.exp()))
            }
            Scorer::Plda(head, model) => {
                let out = head.forward(&pooled, listener)?;
                (
                    model.predict_mos(&out.hidden)?,
                    Some(model.predict_variance(&out.hidden)?),
                )
            }
        };
        predictions.insert(record.utt_id.clone(), (mos, variance));
        systems.insert(record.utt_id.clone(), record.system_id.clone());
    }
    let set = PredictionSet {
        model_id: checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".to_owned()),
        predictions,
    };
    write_predictions(out_csv, &set, &systems)?;
    Ok(set.predictions.len())
}

/// Writes a predictions CSV `utt_id,system_id,mos_pred,variance_pred`
/// (variance empty when absent), sorted by utt_id.
pub fn write_predictions(
    path: &Path,
    set: &PredictionSet,
    systems: &BTreeMap<String, String>,
) -> Result<(), PipelineError> {
    let mut out = String::from("utt_id,system_id,mos_pred,variance_pred\n");
    for (utt_id, (mos, variance)) in &set.predictions {
        let system = systems.get(utt_id).map(String::as_str).unwrap_or("");
        let variance = variance.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{utt_id},{system},{mos},{variance}\n"));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Reads a predictions CSV back into a set plus its utt_id -> system_id map.
pub fn read_predictions(
    path: &Path,
) -> Result<(PredictionSet, BTreeMap<String, String>), PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: u64, reason: &str| PipelineError::BadPredictions {
        path: path.to_path_buf(),
        line,
        reason: reason.to_owned(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "utt_id,system_id,mos_pred,variance_pred")) => {}
        _ => return Err(bad(1, "missing or wrong header")),
    }
    let mut predictions = BTreeMap::new();
    let mut systems = BTreeMap::new();
    for (index, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = index as u64 + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(bad(line_no, "expected 4 cells"));
        }
        let mos: f64 = cells[2].parse().map_err(|_| bad(line_no, "bad mos_pred"))?;
        if !mos.is_finite() {
            return Err(bad(line_no, "non-finite mos_pred"));
        }
        let variance = match cells[3] {
            "" => None,
            v => Some(
                v.parse::<f64>()
                    .map_err(|_| bad(line_no, "bad variance_pred"))?,
            ),
        };
        predictions.insert(cells[0].to_owned(), (mos, variance));
        systems.insert(cells[0].to_owned(), cells[1].to_owned());
    }
    let model_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "predictions".to_owned());
    Ok((
        PredictionSet {
            model_id,
            predictions,
        },
        systems,
    ))
}

/// Evaluates a predictions CSV against the manifest's labels at one level,
/// optionally writing a one-row report CSV.
pub fn run_evaluate(
    predictions_csv: &Path,
    manifest: &Path,
    ratings: Option<&Path>,
    level: Level,
    out: Option<&Path>,
) -> Result<EvalReport, PipelineError> {
    let (set, _) = read_predictions(predictions_csv)?;
    let dataset = Dataset::load(manifest, ratings, None)?;
    let report = evaluate(&set, &dataset.records, level)?;
    if let Some(path) = out {
        let text = format!(
            "level,mse,srcc,pcc,ktau,n\n{},{},{},{},{},{}\n",
            report.level, report.mse, report.srcc, report.pcc, report.ktau, report.n
        );
        std::fs::write(path, text).map_err(io_err(path))?;
    }
    Ok(report)
}

/// Averages prediction CSVs into one ensemble CSV. All members must cover
/// the same utterances.
pub fn run_ensemble(inputs: &[PathBuf], out_csv: &Path) -> Result<usize, PipelineError> {
    let mut sets = Vec::with_capacity(inputs.len());
    let mut systems = BTreeMap::new();
    for path in inputs {
        let (set, sys) = read_predictions(path)?;
        systems.extend(sys);
        sets.push(set);
    }
    let combined = ensemble(&sets)?;
    write_predictions(out_csv, &combined, &systems)?;
    Ok(combined.predictions.len())
}

/// Runs the annotator-subsampling analysis over rated records, optionally
/// writing per-trial rows as CSV.
pub fn run_annotator_analysis(
    manifest: &Path,
    ratings: &Path,
    k: usize,
    n_trials: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<AnnotatorAnalysis, PipelineError> {
    let dataset = Dataset::load(manifest, Some(ratings), None)?;
    let rated: Vec<UtteranceRecord> = dataset
        .records
        .into_iter()
        .filter(|r| !r.listener_ratings.is_empty())
        .collect();
    let analysis = annotator_subsample_analysis(&rated, k, n_trials, seed)?;
    if let Some(path) = out {
        let mut text = String::from("trial,utterance_mse,utterance_srcc,system_mse,system_srcc\n");
        for t in &analysis.trials {
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                t.trial,
                t.utterance_mse,
                fmt(t.utterance_srcc),
                t.system_mse,
                fmt(t.system_srcc)
            ));
        }
        std::fs::write(path, text).map_err(io_err(path))?;
    }
    Ok(analysis)
}

/// Runs the finite-difference gradient suite.
pub fn run_gradcheck(first_seed: u64, n_seeds: u64) -> Result<GradcheckReport, PipelineError> {
    Ok(gradcheck_suite(first_seed, n_seeds)?)
}

/// Summary of one augmentation preview.
#[derive(Debug)]
pub struct PreviewSummary {
    pub snr_db: f64,
    pub realized_snr_db: f64,
    pub noise_class: String,
    pub volume_factor: f64,
    pub tempo_factor: f64,
    pub clean_wav: PathBuf,
    pub noisy_wav: PathBuf,
}

/// Augments one audio file with a seeded draw and writes the clean/noisy
/// pair (plus the scaled noise) under `out_dir`.
pub fn run_preview_augment(
    audio: &Path,
    noise_manifest: &Path,
    config: &RunConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<PreviewSummary, PipelineError> {
    config.validate()?;
    let clip = load_audio(audio)?;
    let table = load_noise_table(noise_manifest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pair = augment_clip(&clip, &table, &config.augment_config(), &mut rng)?;

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let clean_wav = out_dir.join("clean.wav");
    let noisy_wav = out_dir.join("noisy.wav");
    write_audio(&clean_wav, &pair.clean)?;
    write_audio(&noisy_wav, &pair.noisy)?;
    write_audio(&out_dir.join("noise.wav"), &pair.scaled_noise)?;
    let echo = out_dir.join("config.toml");
    std::fs::write(&echo, config.to_toml()).map_err(io_err(&echo))?;

    Ok(PreviewSummary {
        snr_db: pair.snr_db,
        realized_snr_db: realized_snr_db(&pair.clean, &pair.scaled_noise),
        noise_class: table.class_names[pair.noise_class].clone(),
        volume_factor: pair.volume_factor,
        tempo_factor: pair.tempo_factor,
        clean_wav,
        noisy_wav,
    })
}

/// Renders an evaluation report as the human-readable text the CLI prints.
pub fn format_report(report: &EvalReport) -> String {
    format!(
        "level={} n={} mse={:.6} srcc={:.6} pcc={:.6} ktau={:.6}",
        report.level, report.n, report.mse, report.srcc, report.pcc, report.ktau
    )
}

/// Writes `text` to `path`, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            n_train: 60,
            n_dev: 20,
            n_test: 10,
            dim: 4,
            n_systems: 5,
            noise_sigma: 0.05,
            seed: 3,
            with_audio: false,
            with_ratings: false,
            with_aux: false,
        }
    }

    fn quick_config() -> RunConfig {
        RunConfig {
            warmup_steps: 100,
            max_epochs: 8,
            early_stop_level: crate::config::EarlyStopLevel::Utterance,
            augment: false,
            n_bins: 4,
            min_bin_count: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn train_predict_evaluate_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let paths = generate(dir.path(), &small_spec()).unwrap();
        let config = quick_config();
        let checkpoint = dir.path().join("model.mnck");

        let summary = run_train(&config, &paths.manifest, None, None, None, &checkpoint).unwrap();
        assert!(checkpoint.exists());
        assert!(summary.log_csv.exists());
        assert!(summary.config_echo.exists());

        let preds = dir.path().join("preds.csv");
        let n = run_predict(
            &checkpoint,
            None,
            &paths.manifest,
            Some(Split::Dev),
            None,
            &preds,
        )
        .unwrap();
        assert_eq!(n, 20);

        let report = run_evaluate(&preds, &paths.manifest, None, Level::Utterance, None).unwrap();
        assert_eq!(report.n, 20);
        assert!(report.srcc > 0.0, "srcc {}", report.srcc);

        // PLDA fit + predict on the same data
        let model_path = dir.path().join("model.mnpl");
        let model = run_fit_plda(
            &checkpoint,
            &paths.manifest,
            None,
            Split::Train,
            config.n_bins,
            config.min_bin_count,
            &model_path,
        )
        .unwrap();
        assert_eq!(model.spec.n_bins(), 4);
        let plda_preds = dir.path().join("plda_preds.csv");
        run_predict(
            &checkpoint,
            Some(&model_path),
            &paths.manifest,
            Some(Split::Dev),
            None,
            &plda_preds,
        )
        .unwrap();
        let report =
            run_evaluate(&plda_preds, &paths.manifest, None, Level::Utterance, None).unwrap();
        assert!(report.mse.is_finite());
    }

    #[test]
    fn predictions_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut predictions = BTreeMap::new();
        predictions.insert("u1".to_owned(), (3.25, Some(0.1)));
        predictions.insert("u2".to_owned(), (1.5, None));
        let set = PredictionSet {
            model_id: "m".to_owned(),
            predictions,
        };
        let systems: BTreeMap<String, String> = [
            ("u1".to_owned(), "sysA".to_owned()),
            ("u2".to_owned(), "sysB".to_owned()),
        ]
        .into_iter()
        .collect();
        let path = dir.path().join("preds.csv");
        write_predictions(&path, &set, &systems).unwrap();
        let (back, sys) = read_predictions(&path).unwrap();
        assert_eq!(back.predictions, set.predictions);
        assert_eq!(sys, systems);
    }

    #[test]
    fn ensemble_of_one_file_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut predictions = BTreeMap::new();
        predictions.insert("u1".to_owned(), (3.0, None));
        predictions.insert("u2".to_owned(), (4.0, None));
        let set = PredictionSet {
            model_id: "m".to_owned(),
            predictions,
        };
        let systems: BTreeMap<String, String> = [
            ("u1".to_owned(), "s".to_owned()),
            ("u2".to_owned(), "s".to_owned()),
        ]
        .into_iter()
        .collect();
        let a = dir.path().join("a.csv");
        write_predictions(&a, &set, &systems).unwrap();
        let out = dir.path().join("ens.csv");
        run_ensemble(std::slice::from_ref(&a), &out).unwrap();
        let (back, _) = read_predictions(&out).unwrap();
        assert_eq!(back.predictions, set.predictions);
    }

    #[test]
    fn missing_dev_split_names_the_split() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_dev: 0,
            ..small_spec()
        };
        let paths = generate(dir.path(), &spec).unwrap();
        let err = run_train(
            &quick_config(),
            &paths.manifest,
            None,
            None,
            None,
            &dir.path().join("m.mnck"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("dev"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn gradcheck_runs() {
        let report = run_gradcheck(0, 3).unwrap();
        assert!(report.pass);
    }
}
