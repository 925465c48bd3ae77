//! 16-bit PCM mono WAV reading and writing.
//!
//! Only RIFF/WAVE with format tag 1 (PCM), one channel, 16 bits per sample
//! is accepted; anything else is `UnsupportedFormat`. Samples are scaled to
//! [-1, 1] by dividing by 32768, so an i16 write/load round trip is exact.

use std::io::Write;
use std::path::Path;

use byteorder::{WriteBytesExt, LE};

use super::{io_err, DatasetError};

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> AudioClip {
        AudioClip {
            sample_rate,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

fn unsupported(path: &Path, reason: impl Into<String>) -> DatasetError {
    DatasetError::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a 16-bit PCM mono WAV file.
pub fn load_audio(path: &Path) -> Result<AudioClip, DatasetError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let truncated = || DatasetError::TruncatedFile {
        path: path.to_path_buf(),
    };
    if bytes.len() < 12 {
        return Err(truncated());
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(DatasetError::BadMagic {
            path: path.to_path_buf(),
            expected: "RIFF/WAVE",
        });
    }

    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    let mut off = 12;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap()) as usize;
        let body_end = off + 8 + size;
        if body_end > bytes.len() {
            return Err(truncated());
        }
        let body = &bytes[off + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(truncated());
                }
                let format_tag = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format_tag != 1 {
                    return Err(unsupported(
                        path,
                        format!("format tag {format_tag} (want PCM=1)"),
                    ));
                }
                if channels != 1 {
                    return Err(unsupported(
                        path,
                        format!("{channels} channels (want mono)"),
                    ));
                }
                if bits != 16 {
                    return Err(unsupported(
                        path,
                        format!("{bits} bits per sample (want 16)"),
                    ));
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(body),
            _ => {} // skip unknown chunks
        }
        // chunks are word-aligned
        off = body_end + (size & 1);
    }

    let sample_rate = sample_rate.ok_or_else(|| unsupported(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| unsupported(path, "missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(truncated());
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| f64::from(i16::from_le_bytes(c.try_into().unwrap())) / 32768.0)
        .collect();
    Ok(AudioClip {
        sample_rate,
        samples,
    })
}

/// Writes a 16-bit PCM mono WAV file. Samples are clamped to [-1, 1] and
/// quantized by rounding `sample * 32768` into the i16 range.
pub fn write_audio(path: &Path, clip: &AudioClip) -> Result<(), DatasetError> {
    let data_len = (clip.samples.len() * 2) as u32;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    let w = |e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    };

    file.write_all(b"RIFF").map_err(w)?;
    file.write_u32::<LE>(36 + data_len).map_err(w)?;
    file.write_all(b"WAVE").map_err(w)?;
    file.write_all(b"fmt ").map_err(w)?;
    file.write_u32::<LE>(16).map_err(w)?;
    file.write_u16::<LE>(1).map_err(w)?; // PCM
    file.write_u16::<LE>(1).map_err(w)?; // mono
    file.write_u32::<LE>(clip.sample_rate).map_err(w)?;
    file.write_u32::<LE>(clip.sample_rate * 2).map_err(w)?; // byte rate
    file.write_u16::<LE>(2).map_err(w)?; // block align
    file.write_u16::<LE>(16).map_err(w)?; // bits per sample
    file.write_all(b"data").map_err(w)?;
    file.write_u32::<LE>(data_len).map_err(w)?;
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0)
            .round()
            .clamp(-32768.0, 32767.0);
        file.write_i16::<LE>(q as i16).map_err(w)?;
    }
    file.flush().map_err(w)
}
