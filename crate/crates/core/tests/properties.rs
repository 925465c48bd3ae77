//! Property tests for the module invariants.

use mospred::augment::{apply_tempo, mix_noise, realized_snr_db, NoiseEntry};
use mospred::batching::{draw_batches, make_buckets_from_durations, Variant};
use mospred::binning::{assign_bin, expected_mos, fit_bins};
use mospred::dataset::{load_embedding, write_embedding, AudioClip, EmbeddingSequence};
use mospred::metrics::{ensemble, ktau, mse, srcc, PredictionSet};
use mospred::nethead::{loss_contrastive, pool};

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn f32_grid(v: f64) -> f64 {
    f64::from(v as f32)
}

proptest! {
    #[test]
    fn embedding_files_round_trip_bit_exactly(
        rows in 1usize..8,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(rows, cols, |_, _| {
            f32_grid(rand::Rng::random_range(&mut rng, -100.0..100.0))
        });
        let emb = EmbeddingSequence { utt_id: "p".into(), data };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.mneb");
        write_embedding(&path, &emb).unwrap();
        let back = load_embedding(&path).unwrap();
        prop_assert_eq!(back.data, emb.data);
    }

    #[test]
    fn batches_respect_budget_coverage_and_homogeneity(
        durations in proptest::collection::vec(1.0f64..12.0, 5..60),
        n_buckets in 1usize..5,
        epoch_seed in any::<u64>(),
    ) {
        prop_assume!(durations.len() >= n_buckets);
        let items: Vec<(String, f64)> = durations
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("u{i:03}"), *d))
            .collect();
        let buckets = make_buckets_from_durations(&items, n_buckets).unwrap();
        let batches = draw_batches(&buckets, epoch_seed, 40.0).unwrap();

        let mut seen: Vec<String> = Vec::new();
        for batch in &batches {
            prop_assert!(batch.clean_duration_s <= 40.0 + 1e-9);
            prop_assert!(batch.total_duration_s <= 80.0 + 1e-9);
            prop_assert!((batch.total_duration_s - 2.0 * batch.clean_duration_s).abs() < 1e-9);

            let cleans: Vec<&String> = batch.items.iter()
                .filter(|(_, v)| *v == Variant::Clean).map(|(id, _)| id).collect();
            let noisies: Vec<&String> = batch.items.iter()
                .filter(|(_, v)| *v == Variant::Noisy).map(|(id, _)| id).collect();
            prop_assert_eq!(&cleans, &noisies);

            // homogeneity: all items of a batch come from a single bucket
            let owner = buckets.iter().position(|b| {
                b.members.iter().any(|(id, _)| id == cleans[0])
            }).unwrap();
            for id in &cleans {
                prop_assert!(buckets[owner].members.iter().any(|(m, _)| &m == id));
            }
            seen.extend(cleans.into_iter().cloned());
        }
        // exact epoch coverage
        seen.sort();
        let mut expected: Vec<String> = items.iter().map(|(id, _)| id.clone()).collect();
        expected.sort();
        prop_assert_eq!(seen, expected);

        // determinism
        let again = draw_batches(&buckets, epoch_seed, 40.0).unwrap();
        prop_assert_eq!(batches.len(), again.len());
        for (a, b) in batches.iter().zip(&again) {
            prop_assert_eq!(&a.items, &b.items);
        }
    }

    #[test]
    fn realized_snr_matches_request_within_hundredth_db(
        clean_len in 50usize..300,
        noise_len in 31usize..200,
        snr_db in -5.0f64..30.0,
        seed in any::<u64>(),
        phase in 0.0f64..std::f64::consts::TAU,
    ) {
        let clean = AudioClip::new(16000, (0..clean_len)
            .map(|i| 0.05 + 0.4 * ((i as f64) / 17.0 + phase).sin())
            .collect());
        let noise = NoiseEntry {
            noise_id: "n".into(),
            noise_class: 0,
            audio: AudioClip::new(16000, (0..noise_len)
                .map(|i| 0.6 * ((i as f64) / 5.0).cos() + 0.1)
                .collect()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = mix_noise(&clean, &noise, snr_db, &mut rng).unwrap();
        let realized = realized_snr_db(&pair.clean, &pair.scaled_noise);
        prop_assert!((realized - snr_db).abs() < 0.01,
            "requested {}, realized {}", snr_db, realized);
        prop_assert!(pair.noisy.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn tempo_factor_one_is_identity(samples in proptest::collection::vec(-1.0f64..1.0, 1..200)) {
        let clip = AudioClip::new(16000, samples);
        let out = apply_tempo(&clip, 1.0).unwrap();
        prop_assert_eq!(out, clip);
    }

    #[test]
    fn every_fitted_value_lands_in_its_bin(
        raw in proptest::collection::vec(0u8..=32, 40..200),
        n_bins in 1usize..6,
    ) {
        // eighth-step grid like averaged 1-5 ratings
        let values: Vec<f64> = raw.iter().map(|v| 1.0 + f64::from(*v) / 8.0).collect();
        let distinct = {
            let mut d = values.clone();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d.dedup();
            d.len()
        };
        prop_assume!(distinct >= n_bins);
        let spec = fit_bins(&values, n_bins, 1).unwrap();
        prop_assert_eq!(spec.counts().iter().sum::<usize>(), values.len());
        for &v in &values {
            let bin = assign_bin(&spec, v).unwrap();
            prop_assert!(spec.edges()[bin] <= v);
            prop_assert!(v < spec.edges()[bin + 1] || bin + 1 == spec.n_bins());
        }
    }

    #[test]
    fn shifting_posterior_mass_upward_never_decreases_mos(
        weights in proptest::collection::vec(0.01f64..1.0, 4),
        from in 0usize..4,
        to in 0usize..4,
        amount in 0.0f64..1.0,
    ) {
        prop_assume!(from < to);
        let spec = fit_bins(&[1.0, 2.0, 3.0, 4.0, 1.5, 2.5, 3.5, 4.5], 4, 1).unwrap();
        let total: f64 = weights.iter().sum();
        let mut posterior: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let before = expected_mos(&spec, &posterior).unwrap();
        let moved = posterior[from] * amount;
        posterior[from] -= moved;
        posterior[to] += moved;
        let after = expected_mos(&spec, &posterior).unwrap();
        prop_assert!(after >= before - 1e-12);
    }

    #[test]
    fn rank_metrics_are_invariant_under_increasing_transforms(
        x in proptest::collection::vec(-10.0f64..10.0, 3..30),
        y_seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(y_seed);
        let y: Vec<f64> = x.iter().map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect();
        let x_distinct = x.iter().any(|v| *v != x[0]);
        let y_distinct = y.iter().any(|v| *v != y[0]);
        prop_assume!(x_distinct && y_distinct);

        let fx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let s1 = srcc(&x, &y).unwrap();
        let s2 = srcc(&fx, &y).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-9, "{} vs {}", s1, s2);
        let k1 = ktau(&x, &y).unwrap();
        let k2 = ktau(&fx, &y).unwrap();
        prop_assert!((k1 - k2).abs() < 1e-9);
        // symmetry
        prop_assert!((srcc(&x, &y).unwrap() - srcc(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!((mse(&x, &y).unwrap() - mse(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ensemble_mse_never_exceeds_mean_member_mse(
        n_members in 2usize..6,
        n_utts in 2usize..20,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |lo: f64, hi: f64| rand::Rng::random_range(&mut rng, lo..hi);
        let targets: Vec<f64> = (0..n_utts).map(|_| draw(1.0, 5.0)).collect();
        let sets: Vec<PredictionSet> = (0..n_members)
            .map(|m| PredictionSet {
                model_id: format!("m{m}"),
                predictions: (0..n_utts)
                    .map(|u| (format!("u{u}"), (draw(1.0, 5.0), None)))
                    .collect::<BTreeMap<_, _>>(),
            })
            .collect();
        let combined = ensemble(&sets).unwrap();
        let pred_vec = |s: &PredictionSet| -> Vec<f64> {
            s.predictions.values().map(|(p, _)| *p).collect()
        };
        let ens_mse = mse(&pred_vec(&combined), &targets).unwrap();
        let mean_member_mse = sets.iter()
            .map(|s| mse(&pred_vec(s), &targets).unwrap())
            .sum::<f64>() / n_members as f64;
        prop_assert!(ens_mse <= mean_member_mse + 1e-12,
            "ensemble {} vs mean member {}", ens_mse, mean_member_mse);
    }

    #[test]
    fn pool_is_invariant_to_frame_permutation(
        rows in 2usize..8,
        cols in 1usize..5,
        seed in any::<u64>(),
        swap_a in 0usize..8,
        swap_b in 0usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(rows, cols, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let emb = EmbeddingSequence { utt_id: "p".into(), data: data.clone() };
        let mut permuted = data;
        permuted.swap_rows(swap_a % rows, swap_b % rows);
        let emb2 = EmbeddingSequence { utt_id: "p".into(), data: permuted };
        prop_assert_eq!(pool(&emb).unwrap(), pool(&emb2).unwrap());
    }

    #[test]
    fn contrastive_loss_ignores_constant_shifts(
        preds in proptest::collection::vec(-5.0f64..5.0, 2..10),
        shift in -3.0f64..3.0,
        margin in 0.0f64..0.5,
    ) {
        let targets: Vec<f64> = preds.iter().map(|p| p * 0.5 + 1.0).collect();
        let shifted: Vec<f64> = preds.iter().map(|p| p + shift).collect();
        let a = loss_contrastive(&preds, &targets, margin);
        let b = loss_contrastive(&shifted, &targets, margin);
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }
}
