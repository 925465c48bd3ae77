//! Dataset ingestion: manifests, per-listener ratings, auxiliary targets,
//! frame embeddings, and raw audio.
//!
//! All loaders are pure functions of the file bytes and safe to call from
//! multiple threads; the returned records are immutable.

mod audio;
mod embedding;
mod manifest;

pub use audio::{load_audio, write_audio, AudioClip};
pub use embedding::{load_embedding, write_embedding, EmbeddingSequence};
pub use manifest::{load_aux_targets, load_manifest, load_ratings};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed row at {path}:{line}: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("duplicate utt_id {utt_id:?}")]
    DuplicateId { utt_id: String },
    #[error("rating {rating} out of range 1..=5 at {path}:{line}")]
    RatingOutOfRange {
        path: PathBuf,
        line: u64,
        rating: i64,
    },
    #[error("{path}:{line} references unknown utt_id {utt_id:?}")]
    UnknownUtterance {
        path: PathBuf,
        line: u64,
        utt_id: String,
    },
    #[error("referenced file {path} does not exist")]
    MissingFile { path: PathBuf },
    #[error("utt_id {utt_id:?}: mos {mos} does not match mean rating {mean}")]
    InconsistentMos { utt_id: String, mos: f64, mean: f64 },
    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
    },
    #[error("unsupported version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("truncated file {path}")]
    TruncatedFile { path: PathBuf },
    #[error("non-finite value at element {index} of {path}")]
    NonFiniteValue { path: PathBuf, index: usize },
    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
}

/// Dataset split a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One audio item: identifiers, split, duration, MOS label, optional
/// per-listener ratings, optional auxiliary targets, and file references.
///
/// Paths are stored resolved (relative paths are interpreted against the
/// manifest's directory) and are checked for existence at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub system_id: String,
    pub split: Split,
    pub duration_s: f64,
    /// MOS in [1, 5]. When listener ratings are attached this equals their
    /// arithmetic mean (enforced within 1e-6; filled in when absent).
    pub mos: Option<f64>,
    /// `(listener_id, rating)` pairs, ratings in 1..=5.
    pub listener_ratings: Vec<(String, u8)>,
    /// Auxiliary intelligibility target in [0, 1], if ingested.
    pub stoi: Option<f64>,
    /// Auxiliary spectral-distortion target >= 0, if ingested.
    pub mcd: Option<f64>,
    pub embedding_path: Option<PathBuf>,
    pub audio_path: Option<PathBuf>,
}

/// A loaded dataset: records from a manifest with ratings and auxiliary
/// targets merged in.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<UtteranceRecord>,
}

impl Dataset {
    /// Loads a manifest plus optional ratings and auxiliary-target files,
    /// merging everything into per-utterance records.
    ///
    /// When a record has ratings but no MOS, the MOS is filled in as the
    /// mean rating; when both are present they must agree within 1e-6.
    pub fn load(
        manifest: &Path,
        ratings: Option<&Path>,
        aux: Option<&Path>,
    ) -> Result<Dataset, DatasetError> {
        let mut records = load_manifest(manifest)?;
        let by_id: BTreeMap<String, usize> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.utt_id.clone(), i))
            .collect();

        if let Some(path) = ratings {
            let table = load_ratings(path, &by_id)?;
            for (utt_id, pairs) in table {
                let rec = &mut records[by_id[&utt_id]];
                let mean =
                    pairs.iter().map(|(_, r)| f64::from(*r)).sum::<f64>() / pairs.len() as f64;
                match rec.mos {
                    Some(mos) => {
                        if (mos - mean).abs() > 1e-6 {
                            return Err(DatasetError::InconsistentMos { utt_id, mos, mean });
                        }
                    }
                    None => rec.mos = Some(mean),
                }
                rec.listener_ratings = pairs;
            }
        }

        if let Some(path) = aux {
            let table = load_aux_targets(path, &by_id)?;
            for (utt_id, (stoi, mcd)) in table {
                let rec = &mut records[by_id[&utt_id]];
                rec.stoi = stoi;
                rec.mcd = mcd;
            }
        }

        Ok(Dataset { records })
    }

    /// Records belonging to one split, in manifest order.
    pub fn split(&self, split: Split) -> Vec<&UtteranceRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}
