//! Finite-difference verification of the batch-loss gradients.
//!
//! Each seed builds a random tiny head (optionally listener-conditioned)
//! and a random mixed batch, then compares every backpropagated parameter
//! gradient against a central difference with h = 1e-5 for both MOS loss
//! variants. Relative error uses a 1e-6 scale floor so true-zero gradients
//! compare against the difference quotient's noise floor rather than 0/0.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{loss_value, LossItem, LossParams};
use super::model::PredictorHead;
use super::{loss_total, NetError};
use crate::batching::Variant;
use crate::config::MosLossKind;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

/// Worst relative error of one seeded check.
#[derive(Debug, Clone)]
pub struct GradcheckSeedResult {
    pub seed: u64,
    pub max_rel_err: f64,
    pub n_params: usize,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub results: Vec<GradcheckSeedResult>,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Runs the finite-difference check for one seed across both loss kinds.
pub fn gradcheck_seed(seed: u64) -> Result<GradcheckSeedResult, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.random_range(1..=4);
    let hidden_dim = rng.random_range(1..=3);
    let n_classes = rng.random_range(2..=3);
    let with_listeners = rng.random_bool(0.5);
    let listeners = with_listeners.then(|| {
        let n: usize = rng.random_range(1..=3);
        (
            (0..n).map(|i| format!("l{i}")).collect::<Vec<_>>(),
            rng.random_range(1..=3),
        )
    });
    let mut head = PredictorHead::init(input_dim, hidden_dim, n_classes, listeners, &mut rng);

    let n_items = rng.random_range(3..=5);
    let items: Vec<LossItem> = (0..n_items)
        .map(|i| {
            let variant = if i % 2 == 0 {
                Variant::Clean
            } else {
                Variant::Noisy
            };
            LossItem {
                pooled: DVector::from_fn(input_dim, |_, _| rng.random_range(-1.0..1.0)),
                mos: rng.random_range(1.0..5.0),
                variant,
                stoi: rng.random_bool(0.7).then(|| rng.random_range(0.0..1.0)),
                snr: (variant == Variant::Noisy).then(|| rng.random_range(5.0..25.0)),
                noise_class: (variant == Variant::Noisy).then(|| rng.random_range(0..n_classes)),
                listener: head.listeners.as_ref().and_then(|t| {
                    (!t.ids.is_empty()).then(|| {
                        (
                            rng.random_range(0..t.ids.len()),
                            f64::from(rng.random_range(1..=5)),
                        )
                    })
                }),
            }
        })
        .collect();

    let mut max_rel_err: f64 = 0.0;
    let mut n_params = 0;
    for kind in [MosLossKind::Gauss, MosLossKind::LogCosh] {
        let params = LossParams {
            kind,
            ..LossParams::default()
        };
        let (_, grads) = loss_total(&head, &items, &params)?;
        let analytic: Vec<f64> = grads.params().concat();
        n_params = analytic.len();

        let n_groups = head.params().len();
        let mut flat_index = 0;
        for g in 0..n_groups {
            let len = head.params()[g].len();
            for i in 0..len {
                let original = head.params()[g][i];
                head.params_mut()[g][i] = original + STEP;
                let plus = loss_value(&head, &items, &params)?.total;
                head.params_mut()[g][i] = original - STEP;
                let minus = loss_value(&head, &items, &params)?.total;
                head.params_mut()[g][i] = original;

                let numeric = (plus - minus) / (2.0 * STEP);
                let a = analytic[flat_index];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                if rel > max_rel_err {
                    max_rel_err = rel;
                }
                flat_index += 1;
            }
        }
    }

    Ok(GradcheckSeedResult {
        seed,
        max_rel_err,
        n_params,
        pass: max_rel_err < TOLERANCE,
    })
}

/// Runs [`gradcheck_seed`] for `n_seeds` consecutive seeds starting at
/// `first_seed`.
pub fn gradcheck_suite(first_seed: u64, n_seeds: u64) -> Result<GradcheckReport, NetError> {
    let mut results = Vec::with_capacity(n_seeds as usize);
    for seed in first_seed..first_seed + n_seeds {
        results.push(gradcheck_seed(seed)?);
    }
    let max_rel_err = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let pass = results.iter().all(|r| r.pass);
    Ok(GradcheckReport {
        results,
        max_rel_err,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_for_default_seeds() {
        let report = gradcheck_suite(0, 5).unwrap();
        assert!(report.pass, "max relative error {}", report.max_rel_err);
    }
}
