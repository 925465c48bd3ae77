//! Command-line interface: training, PLDA fitting, prediction, evaluation,
//! ensembling, annotator analysis, gradient checking, augmentation preview,
//! and synthetic data generation.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mospred::config::RunConfig;
use mospred::dataset::Split;
use mospred::metrics::Level;
use mospred::pipeline::{self, PipelineError};
use mospred::synth::{generate, SynthSpec};

#[derive(Parser)]
#[command(
    name = "mospred",
    version,
    about = "MOS prediction toolkit: trainable head, PLDA backend, ensembles, and rank metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Utterance,
    System,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Level {
        match l {
            LevelArg::Utterance => Level::Utterance,
            LevelArg::System => Level::System,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key-value TOML config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set seed=7 (repeatable; flags win
    /// over the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let mut table: toml::Table = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| {
                    mospred::config::ConfigError::Io {
                        path: path.display().to_string(),
                        source,
                    }
                })?;
                text.parse().map_err(|e: toml::de::Error| {
                    mospred::config::ConfigError::Parse(e.to_string())
                })?
            }
            None => toml::Table::new(),
        };
        for entry in &self.set {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                mospred::config::ConfigError::Invalid(format!(
                    "--set expects KEY=VALUE, got {entry:?}"
                ))
            })?;
            let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
                Ok(t) => t["v"].clone(),
                Err(_) => toml::Value::String(value.to_owned()),
            };
            table.insert(key.trim().to_owned(), parsed);
        }
        if let Some(seed) = self.seed {
            table.insert("seed".to_owned(), toml::Value::Integer(seed as i64));
        }
        let config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| mospred::config::ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the predictor head and write the best checkpoint plus a log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        aux: Option<PathBuf>,
        /// Noise corpus manifest enabling noisy-variant supervision.
        #[arg(long)]
        noise_manifest: Option<PathBuf>,
        /// Output checkpoint (.mnck); the log and resolved config are
        /// written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the binned PLDA backend on a trained head's hidden features.
    FitPlda {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long, default_value_t = 32)]
        n_bins: usize,
        #[arg(long, default_value_t = 5)]
        min_count: usize,
        /// Output model (.mnpl).
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict MOS for a manifest with a checkpoint (optionally + PLDA).
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Score hidden features with this PLDA model instead of the head's
        /// own projection.
        #[arg(long)]
        plda: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict to one split (default: all records).
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Condition on a listener id (falls back to UNK when unknown).
        #[arg(long)]
        listener: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a predictions CSV against manifest labels.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "system")]
        level: LevelArg,
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average prediction CSVs into one ensemble CSV.
    Ensemble {
        #[arg(long)]
        out: PathBuf,
        /// Member prediction CSVs.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Compare small annotator groups against held-out annotators.
    AnalyzeAnnotators {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
        /// Annotators per candidate group (1..=4).
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-trial metrics as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify loss gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        n_seeds: u64,
    },
    /// Augment one audio file and write the clean/noisy pair.
    PreviewAugment {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        noise_manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic dataset for demos and smoke tests.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 500)]
        n_train: usize,
        #[arg(long, default_value_t = 100)]
        n_dev: usize,
        #[arg(long, default_value_t = 100)]
        n_test: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 10)]
        n_systems: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        with_audio: bool,
        #[arg(long)]
        with_ratings: bool,
        #[arg(long)]
        with_aux: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Train {
            config,
            manifest,
            ratings,
            aux,
            noise_manifest,
            out,
        } => {
            let config = config.resolve()?;
            let summary = pipeline::run_train(
                &config,
                &manifest,
                ratings.as_deref(),
                aux.as_deref(),
                noise_manifest.as_deref(),
                &out,
            )?;
            println!(
                "trained {} epochs; best dev srcc {:.6} at epoch {}",
                summary.epochs_run, summary.best_srcc, summary.best_epoch
            );
            println!("checkpoint: {}", summary.checkpoint.display());
            println!("log: {}", summary.log_csv.display());
            println!("config: {}", summary.config_echo.display());
            Ok(())
        }
        Command::FitPlda {
            checkpoint,
            manifest,
            ratings,
            split,
            n_bins,
            min_count,
            out,
        } => {
            let model = pipeline::run_fit_plda(
                &checkpoint,
                &manifest,
                ratings.as_deref(),
                split.into(),
                n_bins,
                min_count,
                &out,
            )?;
            println!(
                "fitted PLDA: {} bins over {}-dim features; model: {}",
                model.spec.n_bins(),
                model.feature_dim,
                out.display()
            );
            Ok(())
        }
        Command::Predict {
            checkpoint,
            plda,
            manifest,
            split,
            listener,
            out,
        } => {
            let n = pipeline::run_predict(
                &checkpoint,
                plda.as_deref(),
                &manifest,
                split.map(Split::from),
                listener.as_deref(),
                &out,
            )?;
            println!("wrote {n} predictions to {}", out.display());
            Ok(())
        }
        Command::Evaluate {
            predictions,
            manifest,
            ratings,
            level,
            out,
        } => {
            let report = pipeline::run_evaluate(
                &predictions,
                &manifest,
                ratings.as_deref(),
                level.into(),
                out.as_deref(),
            )?;
            println!("{}", pipeline::format_report(&report));
            Ok(())
        }
        Command::Ensemble { out, inputs } => {
            let n = pipeline::run_ensemble(&inputs, &out)?;
            println!(
                "ensembled {} members over {n} utterances into {}",
                inputs.len(),
                out.display()
            );
            Ok(())
        }
        Command::AnalyzeAnnotators {
            manifest,
            ratings,
            k,
            trials,
            seed,
            out,
        } => {
            let analysis = pipeline::run_annotator_analysis(
                &manifest,
                &ratings,
                k,
                trials,
                seed,
                out.as_deref(),
            )?;
            let [utt_mse, utt_srcc, sys_mse, sys_srcc] = analysis.summary();
            println!("k={k} trials={trials}");
            println!(
                "utterance mse {:.6} +- {:.6}, srcc {:.6} +- {:.6}",
                utt_mse.0, utt_mse.1, utt_srcc.0, utt_srcc.1
            );
            println!(
                "system    mse {:.6} +- {:.6}, srcc {:.6} +- {:.6}",
                sys_mse.0, sys_mse.1, sys_srcc.0, sys_srcc.1
            );
            Ok(())
        }
        Command::Gradcheck { seed, n_seeds } => {
            let report = pipeline::run_gradcheck(seed, n_seeds)?;
            for r in &report.results {
                println!(
                    "seed {:3}: {} params, max relative error {:.3e} - {}",
                    r.seed,
                    r.n_params,
                    r.max_rel_err,
                    if r.pass { "ok" } else { "FAIL" }
                );
            }
            if report.pass {
                println!("gradcheck passed ({} seeds)", report.results.len());
                Ok(())
            } else {
                eprintln!(
                    "gradcheck FAILED: max relative error {:.3e}",
                    report.max_rel_err
                );
                std::process::exit(4);
            }
        }
        Command::PreviewAugment {
            audio,
            noise_manifest,
            config,
            out_dir,
        } => {
            let config = config.resolve()?;
            let seed = config.seed;
            let summary =
                pipeline::run_preview_augment(&audio, &noise_manifest, &config, seed, &out_dir)?;
            println!(
                "volume x{:.3}, tempo x{:.3}, noise class {:?}",
                summary.volume_factor, summary.tempo_factor, summary.noise_class
            );
            println!(
                "requested snr {:.2} dB, realized {:.4} dB",
                summary.snr_db, summary.realized_snr_db
            );
            println!("clean: {}", summary.clean_wav.display());
            println!("noisy: {}", summary.noisy_wav.display());
            Ok(())
        }
        Command::GenData {
            out_dir,
            n_train,
            n_dev,
            n_test,
            dim,
            n_systems,
            noise_sigma,
            seed,
            with_audio,
            with_ratings,
            with_aux,
        } => {
            let spec = SynthSpec {
                n_train,
                n_dev,
                n_test,
                dim,
                n_systems,
                noise_sigma,
                seed,
                with_audio,
                with_ratings,
                with_aux,
            };
            let paths = generate(&out_dir, &spec)?;
            println!("manifest: {}", paths.manifest.display());
            if let Some(p) = paths.ratings {
                println!("ratings: {}", p.display());
            }
            if let Some(p) = paths.aux {
                println!("aux targets: {}", p.display());
            }
            if let Some(p) = paths.noise_manifest {
                println!("noise manifest: {}", p.display());
            }
            Ok(())
        }
    }
}
