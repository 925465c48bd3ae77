//! MNEB frame-embedding files.
//!
//! Layout: magic `MNEB` (4 bytes), u32 version (currently 1), u32 T, u32 D,
//! then T*D little-endian 32-bit floats, row-major. Bit-exact and seekable.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use nalgebra::DMatrix;

use super::{io_err, DatasetError};

const MAGIC: &[u8; 4] = b"MNEB";
const VERSION: u32 = 1;

/// Frame-level encoder features for one utterance: a T x D matrix with
/// T >= 1 frames of dimension D >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub utt_id: String,
    /// Row t is the feature vector of frame t.
    pub data: DMatrix<f64>,
}

impl EmbeddingSequence {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Reads an MNEB file. The utt_id is taken from the file stem.
pub fn load_embedding(path: &Path) -> Result<EmbeddingSequence, DatasetError> {
    let mut file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| DatasetError::TruncatedFile {
            path: path.to_path_buf(),
        })?;
    if &magic != MAGIC {
        return Err(DatasetError::BadMagic {
            path: path.to_path_buf(),
            expected: "MNEB",
        });
    }
    let truncated = |_| DatasetError::TruncatedFile {
        path: path.to_path_buf(),
    };
    let version = file.read_u32::<LE>().map_err(truncated)?;
    if version != VERSION {
        return Err(DatasetError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let frames = file.read_u32::<LE>().map_err(truncated)? as usize;
    let dim = file.read_u32::<LE>().map_err(truncated)? as usize;
    if frames == 0 || dim == 0 {
        return Err(DatasetError::MalformedRow {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("embedding header T={frames} D={dim}; both must be >= 1"),
        });
    }

    let mut raw = vec![0u8; frames * dim * 4];
    file.read_exact(&mut raw).map_err(truncated)?;
    let mut data = DMatrix::<f64>::zeros(frames, dim);
    for (index, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(DatasetError::NonFiniteValue {
                path: path.to_path_buf(),
                index,
            });
        }
        data[(index / dim, index % dim)] = f64::from(v);
    }

    let utt_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(EmbeddingSequence { utt_id, data })
}

/// Writes an MNEB file. Values are stored as f32; inputs are expected to be
/// f32-representable so that a write/load round trip is bit-exact.
pub fn write_embedding(path: &Path, emb: &EmbeddingSequence) -> Result<(), DatasetError> {
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    let werr = io_err(path);
    file.write_all(MAGIC).map_err(io_err(path))?;
    file.write_u32::<LE>(VERSION).map_err(io_err(path))?;
    file.write_u32::<LE>(emb.frames() as u32)
        .map_err(io_err(path))?;
    file.write_u32::<LE>(emb.dim() as u32)
        .map_err(io_err(path))?;
    for t in 0..emb.frames() {
        for d in 0..emb.dim() {
            file.write_f32::<LE>(emb.data[(t, d)] as f32)
                .map_err(io_err(path))?;
        }
    }
    file.flush().map_err(werr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_file(dir: &Path, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join("emb.mneb");
        std::fs::write(&p, bytes).unwrap();
        p
    }

    fn header(frames: u32, dim: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"MNEB");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&frames.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        b
    }

    #[test]
    fn reads_zero_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = header(1, 2);
        bytes.extend_from_slice(&0f32.to_le_bytes());
        bytes.extend_from_slice(&0f32.to_le_bytes());
        let emb = load_embedding(&raw_file(dir.path(), &bytes)).unwrap();
        assert_eq!((emb.frames(), emb.dim()), (1, 2));
        assert_eq!(emb.data[(0, 0)], 0.0);
        assert_eq!(emb.data[(0, 1)], 0.0);
    }

    #[test]
    fn bad_magic_truncation_and_nan_are_rejected() {
        let dir = tempfile::tempdir().unwrap();

        let p = raw_file(dir.path(), b"NOPE\x01\x00\x00\x00");
        assert!(matches!(
            load_embedding(&p),
            Err(DatasetError::BadMagic { .. })
        ));

        let mut short = header(2, 2);
        short.extend_from_slice(&1f32.to_le_bytes()); // promises 4 floats, has 1
        let p = raw_file(dir.path(), &short);
        assert!(matches!(
            load_embedding(&p),
            Err(DatasetError::TruncatedFile { .. })
        ));

        let mut nan = header(1, 2);
        nan.extend_from_slice(&1f32.to_le_bytes());
        nan.extend_from_slice(&f32::NAN.to_le_bytes());
        let p = raw_file(dir.path(), &nan);
        match load_embedding(&p) {
            Err(DatasetError::NonFiniteValue { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NonFiniteValue, got {other:?}"),
        }
    }

    #[test]
    fn write_then_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        // values on the f32 grid, as produced by any MNEB load
        let values: Vec<f64> = [0.25f32, -1.5, 3.75e-3, 1.0, -0.0, 42.5]
            .iter()
            .map(|v| f64::from(*v))
            .collect();
        let data = DMatrix::from_row_slice(3, 2, &values);
        let emb = EmbeddingSequence {
            utt_id: "emb".into(),
            data,
        };
        let p = dir.path().join("emb.mneb");
        write_embedding(&p, &emb).unwrap();
        let back = load_embedding(&p).unwrap();
        assert_eq!(back.data, emb.data);
        assert_eq!(back.utt_id, "emb");
    }
}
