//! Synthetic dataset generation.
//!
//! Builds a complete on-disk dataset (manifest, MNEB embeddings, optional
//! WAV audio + noise corpus, optional ratings and auxiliary targets) whose
//! MOS is an affine function of the pooled embedding squashed into [1, 5]
//! plus Gaussian noise. Useful for demos, smoke tests, and verifying the
//! pipeline end to end without any real data.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{write_audio, write_embedding, AudioClip, DatasetError, EmbeddingSequence};
use crate::nethead::pool;

/// Shape of the generated dataset.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub dim: usize,
    pub n_systems: usize,
    /// Standard deviation of the MOS label noise.
    pub noise_sigma: f64,
    pub seed: u64,
    pub with_audio: bool,
    pub with_ratings: bool,
    pub with_aux: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_train: 500,
            n_dev: 100,
            n_test: 100,
            dim: 16,
            n_systems: 10,
            noise_sigma: 0.1,
            seed: 0,
            with_audio: false,
            with_ratings: false,
            with_aux: false,
        }
    }
}

/// Paths of the generated files.
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub manifest: PathBuf,
    pub ratings: Option<PathBuf>,
    pub aux: Option<PathBuf>,
    pub noise_manifest: Option<PathBuf>,
}

const SAMPLE_RATE: u32 = 16_000;

/// Generates the dataset under `dir`.
pub fn generate(dir: &Path, spec: &SynthSpec) -> Result<SynthPaths, DatasetError> {
    let io = |source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir.join("emb")).map_err(io)?;
    if spec.with_audio {
        std::fs::create_dir_all(dir.join("audio")).map_err(io)?;
        std::fs::create_dir_all(dir.join("noise")).map_err(io)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.n_train + spec.n_dev + spec.n_test;
    let weights = DVector::from_fn(spec.dim, |_, _| rng.random_range(-1.0..1.0));

    // first pass: embeddings and raw scores
    let mut pooled_raw = Vec::with_capacity(total);
    let mut durations = Vec::with_capacity(total);
    let mut embeddings = Vec::with_capacity(total);
    for _ in 0..total {
        let duration: f64 = rng.random_range(1.2..11.5);
        let frames = (duration * 4.0).round().max(2.0) as usize;
        // values on the f32 grid so pooling after a file round trip matches
        let data = DMatrix::from_fn(frames, spec.dim, |_, _| {
            f64::from(rng.sample::<f64, _>(StandardNormal) as f32)
        });
        let emb = EmbeddingSequence {
            utt_id: String::new(),
            data,
        };
        let p = pool(&emb).expect("generated embeddings are non-empty");
        pooled_raw.push(weights.dot(&p));
        durations.push(duration);
        embeddings.push(emb);
    }

    // standardize the affine score before squashing so MOS spans [1, 5]
    let mean = pooled_raw.iter().sum::<f64>() / total as f64;
    let var = pooled_raw
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / total as f64;
    let std = var.sqrt().max(1e-9);

    let mut manifest =
        String::from("utt_id,system_id,split,embedding_path,audio_path,mos,duration_s\n");
    let mut ratings_csv = String::from("utt_id,listener_id,rating\n");
    let mut aux_csv = String::from("utt_id,stoi,mcd\n");

    for i in 0..total {
        let utt_id = format!("u{i:04}");
        let split = if i < spec.n_train {
            "train"
        } else if i < spec.n_train + spec.n_dev {
            "dev"
        } else {
            "test"
        };
        let system_id = format!("sys{:02}", i % spec.n_systems);

        let z = (pooled_raw[i] - mean) / std;
        let squashed = 1.0 + 4.0 / (1.0 + (-1.5 * z).exp());
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise_sigma;
        let mut mos = (squashed + noise).clamp(1.0, 5.0);

        if spec.with_ratings {
            // eight listeners; MOS becomes the exact mean of their ratings
            let mut sum = 0u32;
            let mut lines = Vec::with_capacity(8);
            for l in 0..8 {
                let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * 0.7;
                let rating = (mos + jitter).round().clamp(1.0, 5.0) as u32;
                sum += rating;
                lines.push(format!("{utt_id},L{l:02},{rating}\n"));
            }
            mos = f64::from(sum) / 8.0;
            for line in lines {
                ratings_csv.push_str(&line);
            }
        }

        let emb_rel = format!("emb/{utt_id}.mneb");
        let mut emb = std::mem::replace(
            &mut embeddings[i],
            EmbeddingSequence {
                utt_id: String::new(),
                data: DMatrix::zeros(1, 1),
            },
        );
        emb.utt_id = utt_id.clone();
        write_embedding(&dir.join(&emb_rel), &emb)?;

        let (audio_rel, duration_s) = if spec.with_audio {
            let samples = (durations[i] * f64::from(SAMPLE_RATE)).round() as usize;
            let freq = 80.0 + 7.0 * (i % 100) as f64;
            let clip = AudioClip::new(
                SAMPLE_RATE,
                (0..samples)
                    .map(|t| {
                        0.4 * (2.0 * std::f64::consts::PI * freq * t as f64
                            / f64::from(SAMPLE_RATE))
                        .sin()
                    })
                    .collect(),
            );
            let rel = format!("audio/{utt_id}.wav");
            write_audio(&dir.join(&rel), &clip)?;
            (rel, samples as f64 / f64::from(SAMPLE_RATE))
        } else {
            (String::new(), durations[i])
        };

        manifest.push_str(&format!(
            "{utt_id},{system_id},{split},{emb_rel},{audio_rel},{mos},{duration_s:.6}\n"
        ));

        if spec.with_aux {
            let stoi = 1.0 / (1.0 + (-0.8 * z).exp());
            let mcd = 2.0 + (1.5 * z).abs();
            aux_csv.push_str(&format!("{utt_id},{stoi:.6},{mcd:.6}\n"));
        }
    }

    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(io)?;
    let ratings_path = spec.with_ratings.then(|| dir.join("ratings.csv"));
    if let Some(p) = &ratings_path {
        std::fs::write(p, ratings_csv).map_err(io)?;
    }
    let aux_path = spec.with_aux.then(|| dir.join("aux.csv"));
    if let Some(p) = &aux_path {
        std::fs::write(p, aux_csv).map_err(io)?;
    }

    let noise_manifest = if spec.with_audio {
        let mut noise_csv = String::from("noise_id,noise_class_name,audio_path\n");
        let classes = ["white", "hum", "clicks"];
        for (ci, class) in classes.iter().enumerate() {
            for variant in 0..2 {
                let noise_id = format!("{class}{variant}");
                let len = SAMPLE_RATE as usize * 2 + variant * 4321;
                let samples: Vec<f64> = match ci {
                    0 => (0..len).map(|_| rng.random_range(-0.3..0.3)).collect(),
                    1 => (0..len)
                        .map(|t| {
                            0.25 * (2.0
                                * std::f64::consts::PI
                                * (50.0 + 10.0 * variant as f64)
                                * t as f64
                                / f64::from(SAMPLE_RATE))
                            .sin()
                        })
                        .collect(),
                    _ => (0..len)
                        .map(|t| if t % 1000 < 20 { 0.8 } else { 0.01 })
                        .collect(),
                };
                let rel = format!("noise/{noise_id}.wav");
                write_audio(&dir.join(&rel), &AudioClip::new(SAMPLE_RATE, samples))?;
                noise_csv.push_str(&format!("{noise_id},{class},{rel}\n"));
            }
        }
        let path = dir.join("noise.csv");
        std::fs::write(&path, noise_csv).map_err(io)?;
        Some(path)
    } else {
        None
    };

    Ok(SynthPaths {
        manifest: manifest_path,
        ratings: ratings_path,
        aux: aux_path,
        noise_manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, Split};

    #[test]
    fn generated_dataset_loads_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_train: 30,
            n_dev: 10,
            n_test: 5,
            dim: 4,
            n_systems: 5,
            with_audio: true,
            with_ratings: true,
            with_aux: true,
            ..SynthSpec::default()
        };
        let paths = generate(dir.path(), &spec).unwrap();
        let ds = Dataset::load(
            &paths.manifest,
            paths.ratings.as_deref(),
            paths.aux.as_deref(),
        )
        .unwrap();
        assert_eq!(ds.records.len(), 45);
        assert_eq!(ds.split(Split::Train).len(), 30);
        assert_eq!(ds.split(Split::Dev).len(), 10);
        assert_eq!(ds.split(Split::Test).len(), 5);
        for r in &ds.records {
            assert!(r.mos.is_some());
            assert_eq!(r.listener_ratings.len(), 8);
            assert!(r.stoi.is_some() && r.mcd.is_some());
            assert!(r.embedding_path.is_some() && r.audio_path.is_some());
        }
        assert!(paths.noise_manifest.is_some());
        let table = crate::augment::load_noise_table(&paths.noise_manifest.unwrap()).unwrap();
        assert_eq!(table.n_classes(), 3);
        assert_eq!(table.entries.len(), 6);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            n_train: 10,
            n_dev: 5,
            n_test: 0,
            dim: 3,
            ..SynthSpec::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(a.path(), &spec).unwrap();
        generate(b.path(), &spec).unwrap();
        let ma = std::fs::read(a.path().join("manifest.csv")).unwrap();
        let mb = std::fs::read(b.path().join("manifest.csv")).unwrap();
        assert_eq!(ma, mb);
        let ea = std::fs::read(a.path().join("emb/u0003.mneb")).unwrap();
        let eb = std::fs::read(b.path().join("emb/u0003.mneb")).unwrap();
        assert_eq!(ea, eb);
    }
}
