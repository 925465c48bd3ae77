//! Time-domain augmentation: volume and tempo perturbation plus noise
//! mixing at a requested SNR.
//!
//! Augmentation produces clean/noisy utterance pairs together with the
//! automatically generated supervision (realized SNR, noise class) consumed
//! by the multi-task heads. Everything is pure given an explicit seeded
//! generator; callers may parallelize across utterances with independently
//! derived seeds.

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::dataset::{load_audio, AudioClip, DatasetError, UtteranceRecord};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("empty audio clip")]
    EmptyClip,
    #[error("clean signal is silent (zero power)")]
    SilentClean,
    #[error("noise segment is silent (zero power)")]
    SilentNoise,
    #[error("record {utt_id:?} has no audio_path")]
    NoAudioPath { utt_id: String },
    #[error("noise table is empty")]
    EmptyNoiseTable,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// One entry of the noise corpus: a class index into the table's class-name
/// list plus the noise audio itself.
#[derive(Debug, Clone)]
pub struct NoiseEntry {
    pub noise_id: String,
    pub noise_class: usize,
    pub audio: AudioClip,
}

/// Noise corpus loaded from a manifest. The class-name table is derived from
/// the distinct names in file order.
#[derive(Debug, Clone)]
pub struct NoiseTable {
    pub class_names: Vec<String>,
    pub entries: Vec<NoiseEntry>,
}

impl NoiseTable {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Loads a noise manifest CSV `noise_id,noise_class_name,audio_path` with
/// paths resolved against the manifest directory.
pub fn load_noise_table(path: &Path) -> Result<NoiseTable, AugmentError> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DatasetError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => DatasetError::MalformedRow {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("{other:?}"),
            },
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| DatasetError::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != ["noise_id", "noise_class_name", "audio_path"] {
        return Err(DatasetError::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("unexpected noise manifest header {header:?}"),
        }
        .into());
    }

    let mut class_names: Vec<String> = Vec::new();
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| DatasetError::MalformedRow {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| row.get(i).unwrap_or("").trim().to_owned();
        let noise_id = get(0);
        let class_name = get(1);
        if noise_id.is_empty() || class_name.is_empty() {
            return Err(DatasetError::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: "empty noise_id or noise_class_name".into(),
            }
            .into());
        }
        let noise_class = match class_names.iter().position(|c| *c == class_name) {
            Some(i) => i,
            None => {
                class_names.push(class_name);
                class_names.len() - 1
            }
        };
        let audio_rel = get(2);
        let audio_path = if Path::new(&audio_rel).is_absolute() {
            std::path::PathBuf::from(&audio_rel)
        } else {
            base.join(&audio_rel)
        };
        let audio = load_audio(&audio_path)?;
        if audio.is_empty() {
            return Err(AugmentError::EmptyClip);
        }
        entries.push(NoiseEntry {
            noise_id,
            noise_class,
            audio,
        });
    }
    Ok(NoiseTable {
        class_names,
        entries,
    })
}

/// A clean/noisy pair produced by augmentation. Clean and noisy have
/// identical length and share the same volume/tempo perturbation, so they
/// differ only by the additive (scaled) noise component.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub clean: AudioClip,
    pub noisy: AudioClip,
    /// The additive noise component before clamping; lets callers verify the
    /// realized SNR against `snr_db`.
    pub scaled_noise: AudioClip,
    pub snr_db: f64,
    pub noise_class: usize,
    pub volume_factor: f64,
    pub tempo_factor: f64,
}

/// Scales every sample by `factor` (then clamps to [-1, 1]) with probability
/// `prob`; otherwise returns the input unchanged, bit-exactly.
pub fn apply_volume(clip: &AudioClip, factor: f64, rng: &mut impl Rng, prob: f64) -> AudioClip {
    let u: f64 = rng.random();
    if u < prob {
        AudioClip::new(
            clip.sample_rate,
            clip.samples
                .iter()
                .map(|s| (s * factor).clamp(-1.0, 1.0))
                .collect(),
        )
    } else {
        clip.clone()
    }
}

/// The tempo factor grid: `n+1` uniform steps from `min` to `min + n*step`
/// where `n = round((max - min) / step)`. Defaults give 181 values over
/// [0.9, 1.08].
pub fn tempo_grid(min: f64, max: f64, step: f64) -> Vec<f64> {
    let n = ((max - min) / step).round() as usize;
    (0..=n).map(|i| min + i as f64 * step).collect()
}

/// Resampling-based speed change: output length is `round(len / factor)` and
/// sample k is linearly interpolated from the input at position `k * factor`.
/// A factor of exactly 1.0 is the bit-exact identity.
pub fn apply_tempo(clip: &AudioClip, factor: f64) -> Result<AudioClip, AugmentError> {
    if clip.is_empty() {
        return Err(AugmentError::EmptyClip);
    }
    if factor == 1.0 {
        return Ok(clip.clone());
    }
    let in_len = clip.samples.len();
    let out_len = (in_len as f64 / factor).round().max(1.0) as usize;
    let mut samples = Vec::with_capacity(out_len);
    for k in 0..out_len {
        let pos = k as f64 * factor;
        let i = pos.floor() as usize;
        if i + 1 >= in_len {
            samples.push(clip.samples[in_len - 1]);
        } else {
            let frac = pos - i as f64;
            samples.push(clip.samples[i] * (1.0 - frac) + clip.samples[i + 1] * frac);
        }
    }
    Ok(AudioClip::new(clip.sample_rate, samples))
}

/// Crops the noise at a random offset (looping when shorter than the clean
/// signal), scales it so the realized SNR matches `snr_db`, and adds it to
/// the clean signal with clamping to [-1, 1].
///
/// The gain is `sqrt(P_clean / (P_noise * 10^(snr_db / 10)))` where each `P`
/// is the mean squared amplitude of the segment actually used.
pub fn mix_noise(
    clean: &AudioClip,
    noise: &NoiseEntry,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<AugmentedPair, AugmentError> {
    if noise.audio.is_empty() {
        return Err(AugmentError::EmptyClip);
    }
    let p_clean = clean.power();
    if p_clean <= 0.0 {
        return Err(AugmentError::SilentClean);
    }

    let n_len = noise.audio.samples.len();
    let offset = rng.random_range(0..n_len);
    let segment: Vec<f64> = (0..clean.samples.len())
        .map(|i| noise.audio.samples[(offset + i) % n_len])
        .collect();
    let p_noise = segment.iter().map(|s| s * s).sum::<f64>() / segment.len() as f64;
    if p_noise <= 0.0 {
        return Err(AugmentError::SilentNoise);
    }

    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled_noise: Vec<f64> = segment.iter().map(|s| s * gain).collect();
    let noisy: Vec<f64> = clean
        .samples
        .iter()
        .zip(&scaled_noise)
        .map(|(c, n)| (c + n).clamp(-1.0, 1.0))
        .collect();

    Ok(AugmentedPair {
        clean: clean.clone(),
        noisy: AudioClip::new(clean.sample_rate, noisy),
        scaled_noise: AudioClip::new(clean.sample_rate, scaled_noise),
        snr_db,
        noise_class: noise.noise_class,
        volume_factor: 1.0,
        tempo_factor: 1.0,
    })
}

/// Knobs for [`make_training_pair`]. Defaults follow the training recipe:
/// volume perturbation with probability 0.8 and factor in [0.5, 2], tempo
/// factors on the 181-value grid over [0.9, 1.08], SNR uniform in [10, 20].
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub volume_prob: f64,
    pub volume_range: (f64, f64),
    pub tempo_grid: Vec<f64>,
    pub snr_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            volume_prob: 0.8,
            volume_range: (0.5, 2.0),
            tempo_grid: tempo_grid(0.9, 1.08, 0.001),
            snr_range: (10.0, 20.0),
        }
    }
}

/// Builds one clean/noisy training pair for a record.
///
/// Volume (with `volume_prob`) and tempo (uniform over the grid) are applied
/// to the clean signal first and shared by both variants; one uniformly
/// chosen noise is then mixed in at an SNR drawn from `snr_range`. Draw
/// order: volume factor, volume coin, tempo index, noise index, SNR, noise
/// offset.
pub fn make_training_pair(
    record: &UtteranceRecord,
    noise_table: &NoiseTable,
    config: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<AugmentedPair, AugmentError> {
    let audio_path = record
        .audio_path
        .as_ref()
        .ok_or_else(|| AugmentError::NoAudioPath {
            utt_id: record.utt_id.clone(),
        })?;
    let clip = load_audio(audio_path)?;
    augment_clip(&clip, noise_table, config, rng)
}

/// [`make_training_pair`] on an already-loaded clip.
pub fn augment_clip(
    clip: &AudioClip,
    noise_table: &NoiseTable,
    config: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<AugmentedPair, AugmentError> {
    if noise_table.entries.is_empty() {
        return Err(AugmentError::EmptyNoiseTable);
    }
    let (vmin, vmax) = config.volume_range;
    let volume_factor = if vmax > vmin {
        rng.random_range(vmin..vmax)
    } else {
        vmin
    };
    let after_volume = apply_volume(clip, volume_factor, rng, config.volume_prob);
    let tempo_factor = config.tempo_grid[rng.random_range(0..config.tempo_grid.len())];
    let clean = apply_tempo(&after_volume, tempo_factor)?;

    let entry = &noise_table.entries[rng.random_range(0..noise_table.entries.len())];
    let (smin, smax) = config.snr_range;
    let snr_db = if smax > smin {
        rng.random_range(smin..smax)
    } else {
        smin
    };
    let mut pair = mix_noise(&clean, entry, snr_db, rng)?;
    pair.volume_factor = volume_factor;
    pair.tempo_factor = tempo_factor;
    Ok(pair)
}

/// Realized SNR in dB of `clean` against an additive noise component,
/// `10 * log10(P_clean / P_noise)`.
pub fn realized_snr_db(clean: &AudioClip, scaled_noise: &AudioClip) -> f64 {
    10.0 * (clean.power() / scaled_noise.power()).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip(samples: &[f64]) -> AudioClip {
        AudioClip::new(16000, samples.to_vec())
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn square_noise(len: usize) -> NoiseEntry {
        // alternating +-1 has power exactly 1 for any segment
        NoiseEntry {
            noise_id: "sq".into(),
            noise_class: 0,
            audio: clip(
                &(0..len)
                    .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
                    .collect::<Vec<_>>(),
            ),
        }
    }

    #[test]
    fn volume_scales_and_clamps() {
        let c = clip(&[0.2, -0.4]);
        let out = apply_volume(&c, 2.0, &mut rng(0), 1.0);
        assert_eq!(out.samples, vec![0.4, -0.8]);

        let c = clip(&[0.8]);
        let out = apply_volume(&c, 2.0, &mut rng(0), 1.0);
        assert_eq!(out.samples, vec![1.0]);
    }

    #[test]
    fn volume_prob_zero_is_identity() {
        let c = clip(&[0.1, -0.9, 0.5]);
        let out = apply_volume(&c, 1.7, &mut rng(3), 0.0);
        assert_eq!(out, c);
    }

    #[test]
    fn tempo_identity_and_lengths() {
        let c = clip(
            &(0..1000)
                .map(|i| (i as f64 / 300.0).sin() * 0.5)
                .collect::<Vec<_>>(),
        );
        let same = apply_tempo(&c, 1.0).unwrap();
        assert_eq!(same, c);

        assert_eq!(apply_tempo(&c, 1.08).unwrap().len(), 926);
        assert_eq!(apply_tempo(&c, 0.9).unwrap().len(), 1111);
        assert!(matches!(
            apply_tempo(&clip(&[]), 1.0),
            Err(AugmentError::EmptyClip)
        ));
    }

    #[test]
    fn tempo_grid_has_181_values() {
        let grid = tempo_grid(0.9, 1.08, 0.001);
        assert_eq!(grid.len(), 181);
        assert!((grid[0] - 0.9).abs() < 1e-12);
        assert!((grid[180] - 1.08).abs() < 1e-9);
    }

    #[test]
    fn noise_gain_matches_formula() {
        // clean alternating +-1 -> P_clean = 1; square noise -> P_noise = 1
        let clean = clip(
            &(0..64)
                .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
                .collect::<Vec<_>>(),
        );
        let pair = mix_noise(&clean, &square_noise(64), 10.0, &mut rng(1)).unwrap();
        let gain = pair.scaled_noise.samples[0].abs();
        assert!((gain - 10f64.powf(-0.5)).abs() < 1e-12, "gain {gain}");

        let pair = mix_noise(&clean, &square_noise(64), 0.0, &mut rng(1)).unwrap();
        assert!((pair.scaled_noise.samples[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silent_inputs_are_rejected() {
        let silent = clip(&[0.0; 16]);
        assert!(matches!(
            mix_noise(&silent, &square_noise(16), 10.0, &mut rng(0)),
            Err(AugmentError::SilentClean)
        ));

        let clean = clip(&[0.5; 16]);
        let silent_noise = NoiseEntry {
            noise_id: "z".into(),
            noise_class: 0,
            audio: clip(&[0.0; 16]),
        };
        assert!(matches!(
            mix_noise(&clean, &silent_noise, 10.0, &mut rng(0)),
            Err(AugmentError::SilentNoise)
        ));
    }

    #[test]
    fn realized_snr_matches_request() {
        let mut r = rng(42);
        for trial in 0..50 {
            let clean = clip(
                &(0..500)
                    .map(|i| ((i * (trial + 3)) as f64 / 97.0).sin() * 0.4)
                    .collect::<Vec<_>>(),
            );
            let noise = NoiseEntry {
                noise_id: "n".into(),
                noise_class: 0,
                audio: clip(
                    &(0..173)
                        .map(|i| ((i * 13) as f64 / 31.0).cos() * 0.7)
                        .collect::<Vec<_>>(),
                ),
            };
            let snr = r.random_range(0.0..30.0);
            let pair = mix_noise(&clean, &noise, snr, &mut r).unwrap();
            let realized = realized_snr_db(&pair.clean, &pair.scaled_noise);
            assert!(
                (realized - snr).abs() < 0.01,
                "requested {snr}, got {realized}"
            );
        }
    }

    #[test]
    fn identity_composition_reduces_to_plain_mixing() {
        let clean = clip(
            &(0..64)
                .map(|i| if i % 2 == 0 { 0.5 } else { -0.5 })
                .collect::<Vec<_>>(),
        );
        let table = NoiseTable {
            class_names: vec!["sq".into()],
            entries: vec![square_noise(64)],
        };
        let config = AugmentConfig {
            volume_prob: 0.0,
            volume_range: (1.0, 1.0),
            tempo_grid: vec![1.0],
            snr_range: (0.0, 0.0),
        };
        let pair = augment_clip(&clean, &table, &config, &mut rng(5)).unwrap();
        assert_eq!(pair.clean, clean);
        for ((n, c), s) in pair
            .noisy
            .samples
            .iter()
            .zip(&clean.samples)
            .zip(&pair.scaled_noise.samples)
        {
            assert!((n - (c + s).clamp(-1.0, 1.0)).abs() < 1e-12);
        }
        // P_clean = 0.25 vs P_noise = 1 at 0 dB -> gain 0.5
        assert!((pair.scaled_noise.samples[0].abs() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn same_seed_gives_identical_pairs() {
        let clean = clip(
            &(0..200)
                .map(|i| (i as f64 / 41.0).sin() * 0.3)
                .collect::<Vec<_>>(),
        );
        let table = NoiseTable {
            class_names: vec!["sq".into()],
            entries: vec![square_noise(77), square_noise(131)],
        };
        let config = AugmentConfig::default();
        let a = augment_clip(&clean, &table, &config, &mut rng(9)).unwrap();
        let b = augment_clip(&clean, &table, &config, &mut rng(9)).unwrap();
        assert_eq!(a.noisy.samples, b.noisy.samples);
        assert_eq!(a.snr_db, b.snr_db);
        assert_eq!(a.tempo_factor, b.tempo_factor);
        assert_eq!(a.volume_factor, b.volume_factor);
    }

    #[test]
    fn outputs_stay_in_range() {
        let clean = clip(
            &(0..300)
                .map(|i| ((i as f64) / 7.0).sin() * 0.95)
                .collect::<Vec<_>>(),
        );
        let table = NoiseTable {
            class_names: vec!["sq".into()],
            entries: vec![square_noise(64)],
        };
        let config = AugmentConfig {
            snr_range: (-10.0, -10.0), // loud noise to force clamping
            ..AugmentConfig::default()
        };
        let pair = augment_clip(&clean, &table, &config, &mut rng(2)).unwrap();
        assert!(pair.noisy.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
    }
}
