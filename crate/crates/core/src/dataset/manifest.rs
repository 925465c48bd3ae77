//! CSV manifests: the utterance table, per-listener ratings, and auxiliary
//! targets.
//!
//! Schemas (header rows are mandatory and checked verbatim):
//!
//! - manifest: `utt_id,system_id,split,embedding_path,audio_path,mos,duration_s`
//! - ratings:  `utt_id,listener_id,rating`
//! - aux:      `utt_id,stoi,mcd`
//!
//! Empty cells mean "absent". Paths are resolved against the manifest's
//! directory and must exist.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::{io_err, DatasetError, Split, UtteranceRecord};

const MANIFEST_HEADER: [&str; 7] = [
    "utt_id",
    "system_id",
    "split",
    "embedding_path",
    "audio_path",
    "mos",
    "duration_s",
];
const RATINGS_HEADER: [&str; 3] = ["utt_id", "listener_id", "rating"];
const AUX_HEADER: [&str; 3] = ["utt_id", "stoi", "mcd"];

fn malformed(path: &Path, line: u64, reason: impl Into<String>) -> DatasetError {
    DatasetError::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn open_reader(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(path)(source),
            other => malformed(path, 1, format!("{other:?}")),
        })?;
    let got: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if got != header {
        return Err(malformed(
            path,
            1,
            format!("header {got:?} does not match expected {header:?}"),
        ));
    }
    Ok(reader)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Resolves a manifest cell path against `base` and checks it exists.
fn resolve_path(base: &Path, cell: &str) -> Result<PathBuf, DatasetError> {
    let raw = Path::new(cell);
    let resolved = if raw.is_absolute() {
        raw.to_path_buf()
    } else {
        base.join(raw)
    };
    if !resolved.exists() {
        return Err(DatasetError::MissingFile { path: resolved });
    }
    Ok(resolved)
}

/// Loads the utterance manifest. One record per data row; duplicate ids are
/// rejected and every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>, DatasetError> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = open_reader(path, &MANIFEST_HEADER)?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();

    for row in reader.records() {
        let row = row.map_err(|e| malformed(path, 0, e.to_string()))?;
        let line = record_line(&row);
        let field = |i: usize| row.get(i).unwrap_or("").trim();

        let utt_id = field(0).to_owned();
        if utt_id.is_empty() {
            return Err(malformed(path, line, "empty utt_id"));
        }
        if !seen.insert(utt_id.clone()) {
            return Err(DatasetError::DuplicateId { utt_id });
        }
        let system_id = field(1).to_owned();
        if system_id.is_empty() {
            return Err(malformed(path, line, "empty system_id"));
        }
        let split = Split::parse(field(2))
            .ok_or_else(|| malformed(path, line, format!("unknown split {:?}", field(2))))?;

        let embedding_path = match field(3) {
            "" => None,
            cell => Some(resolve_path(base, cell)?),
        };
        let audio_path = match field(4) {
            "" => None,
            cell => Some(resolve_path(base, cell)?),
        };

        let mos = match field(5) {
            "" => None,
            cell => {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| malformed(path, line, format!("bad mos {cell:?}")))?;
                if !(1.0..=5.0).contains(&v) {
                    return Err(malformed(path, line, format!("mos {v} outside [1, 5]")));
                }
                Some(v)
            }
        };
        let duration_s: f64 = field(6)
            .parse()
            .map_err(|_| malformed(path, line, format!("bad duration_s {:?}", field(6))))?;
        if !duration_s.is_finite() || duration_s <= 0.0 {
            return Err(malformed(
                path,
                line,
                format!("duration_s {duration_s} must be > 0"),
            ));
        }

        records.push(UtteranceRecord {
            utt_id,
            system_id,
            split,
            duration_s,
            mos,
            listener_ratings: Vec::new(),
            stoi: None,
            mcd: None,
            embedding_path,
            audio_path,
        });
    }
    Ok(records)
}

/// Loads the per-listener ratings table keyed by utt_id. Rating values must
/// be integers in 1..=5 and every utt_id must appear in `known`.
pub fn load_ratings(
    path: &Path,
    known: &BTreeMap<String, usize>,
) -> Result<BTreeMap<String, Vec<(String, u8)>>, DatasetError> {
    let mut reader = open_reader(path, &RATINGS_HEADER)?;
    let mut table: BTreeMap<String, Vec<(String, u8)>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| malformed(path, 0, e.to_string()))?;
        let line = record_line(&row);
        let utt_id = row.get(0).unwrap_or("").trim().to_owned();
        if !known.contains_key(&utt_id) {
            return Err(DatasetError::UnknownUtterance {
                path: path.to_path_buf(),
                line,
                utt_id,
            });
        }
        let listener_id = row.get(1).unwrap_or("").trim().to_owned();
        if listener_id.is_empty() {
            return Err(malformed(path, line, "empty listener_id"));
        }
        let raw = row.get(2).unwrap_or("").trim();
        let rating: i64 = raw
            .parse()
            .map_err(|_| malformed(path, line, format!("bad rating {raw:?}")))?;
        if !(1..=5).contains(&rating) {
            return Err(DatasetError::RatingOutOfRange {
                path: path.to_path_buf(),
                line,
                rating,
            });
        }
        table
            .entry(utt_id)
            .or_default()
            .push((listener_id, rating as u8));
    }
    Ok(table)
}

type AuxRow = (Option<f64>, Option<f64>);

/// Loads auxiliary targets (STOI in [0, 1], MCD >= 0) keyed by utt_id.
pub fn load_aux_targets(
    path: &Path,
    known: &BTreeMap<String, usize>,
) -> Result<BTreeMap<String, AuxRow>, DatasetError> {
    let mut reader = open_reader(path, &AUX_HEADER)?;
    let mut table = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| malformed(path, 0, e.to_string()))?;
        let line = record_line(&row);
        let utt_id = row.get(0).unwrap_or("").trim().to_owned();
        if !known.contains_key(&utt_id) {
            return Err(DatasetError::UnknownUtterance {
                path: path.to_path_buf(),
                line,
                utt_id,
            });
        }
        let stoi = match row.get(1).unwrap_or("").trim() {
            "" => None,
            cell => {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| malformed(path, line, format!("bad stoi {cell:?}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(malformed(path, line, format!("stoi {v} outside [0, 1]")));
                }
                Some(v)
            }
        };
        let mcd = match row.get(2).unwrap_or("").trim() {
            "" => None,
            cell => {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| malformed(path, line, format!("bad mcd {cell:?}")))?;
                if v < 0.0 {
                    return Err(malformed(path, line, format!("mcd {v} must be >= 0")));
                }
                Some(v)
            }
        };
        table.insert(utt_id, (stoi, mcd));
    }
    Ok(table)
}
