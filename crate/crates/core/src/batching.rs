//! Duration filtering, quantile bucketing, and dynamic batch assembly.
//!
//! Batches pack whole utterances greedily up to a clean-audio time budget;
//! every packed utterance contributes a clean and a noisy item, so the total
//! audio per batch is twice the clean duration. The batch sequence of an
//! epoch is a deterministic function of the epoch seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::UtteranceRecord;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("{records} records cannot fill {buckets} buckets")]
    TooFewRecords { records: usize, buckets: usize },
    #[error("utterance {utt_id:?} ({duration_s} s) exceeds the {budget_s} s clean budget")]
    UtteranceTooLong {
        utt_id: String,
        duration_s: f64,
        budget_s: f64,
    },
}

/// A duration bucket: members whose durations lie in `[min_dur, max_dur)`.
#[derive(Debug, Clone)]
pub struct Bucket {
    pub index: usize,
    pub min_dur: f64,
    pub max_dur: f64,
    /// `(utt_id, duration_s)` pairs, sorted by duration.
    pub members: Vec<(String, f64)>,
}

/// Which variant of an utterance a batch item refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Clean,
    Noisy,
}

/// One training batch. Items come from a single bucket and each clean item
/// has its noisy twin present.
#[derive(Debug, Clone)]
pub struct Batch {
    pub items: Vec<(String, Variant)>,
    pub clean_duration_s: f64,
    pub total_duration_s: f64,
}

/// Keeps records whose duration lies in `[min_s, max_s]` (both endpoints
/// included).
pub fn filter_by_duration(
    records: Vec<UtteranceRecord>,
    min_s: f64,
    max_s: f64,
) -> Vec<UtteranceRecord> {
    records
        .into_iter()
        .filter(|r| r.duration_s >= min_s && r.duration_s <= max_s)
        .collect()
}

/// Splits records into `n_buckets` contiguous quantile groups by duration.
/// Bucket sizes differ by at most one; ties are broken by utt_id so the
/// result is a pure function of the input set.
pub fn make_buckets(
    records: &[UtteranceRecord],
    n_buckets: usize,
) -> Result<Vec<Bucket>, BatchError> {
    let pairs: Vec<(String, f64)> = records
        .iter()
        .map(|r| (r.utt_id.clone(), r.duration_s))
        .collect();
    make_buckets_from_durations(&pairs, n_buckets)
}

/// [`make_buckets`] on bare `(utt_id, duration_s)` pairs.
pub fn make_buckets_from_durations(
    items: &[(String, f64)],
    n_buckets: usize,
) -> Result<Vec<Bucket>, BatchError> {
    if items.len() < n_buckets {
        return Err(BatchError::TooFewRecords {
            records: items.len(),
            buckets: n_buckets,
        });
    }
    let mut sorted = items.to_vec();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));

    let n = sorted.len();
    let base = n / n_buckets;
    let extra = n % n_buckets;
    let mut buckets = Vec::with_capacity(n_buckets);
    let mut start = 0;
    for index in 0..n_buckets {
        let size = base + usize::from(index < extra);
        let members: Vec<(String, f64)> = sorted[start..start + size].to_vec();
        let min_dur = members.first().unwrap().1;
        let max_dur = members.last().unwrap().1.next_up();
        buckets.push(Bucket {
            index,
            min_dur,
            max_dur,
            members,
        });
        start += size;
    }
    Ok(buckets)
}

/// Draws one epoch of batches: bucket order and member order are shuffled
/// from `epoch_seed`, then members are packed greedily until adding another
/// clean utterance would exceed `clean_budget_s`. Every member appears in
/// exactly one batch; underfull trailing batches are emitted, not dropped.
pub fn draw_batches(
    buckets: &[Bucket],
    epoch_seed: u64,
    clean_budget_s: f64,
) -> Result<Vec<Batch>, BatchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut order: Vec<usize> = (0..buckets.len()).collect();
    order.shuffle(&mut rng);

    let mut batches = Vec::new();
    for &bi in &order {
        let mut members = buckets[bi].members.clone();
        members.shuffle(&mut rng);

        let mut current: Vec<(String, f64)> = Vec::new();
        let mut clean_total = 0.0;
        for (utt_id, duration_s) in members {
            if duration_s > clean_budget_s {
                return Err(BatchError::UtteranceTooLong {
                    utt_id,
                    duration_s,
                    budget_s: clean_budget_s,
                });
            }
            if clean_total + duration_s > clean_budget_s && !current.is_empty() {
                batches.push(close_batch(std::mem::take(&mut current), clean_total));
                clean_total = 0.0;
            }
            clean_total += duration_s;
            current.push((utt_id, duration_s));
        }
        if !current.is_empty() {
            batches.push(close_batch(current, clean_total));
        }
    }
    Ok(batches)
}

fn close_batch(members: Vec<(String, f64)>, clean_duration_s: f64) -> Batch {
    let mut items = Vec::with_capacity(members.len() * 2);
    for (utt_id, _) in &members {
        items.push((utt_id.clone(), Variant::Clean));
        items.push((utt_id.clone(), Variant::Noisy));
    }
    Batch {
        items,
        clean_duration_s,
        total_duration_s: 2.0 * clean_duration_s,
    }
}
