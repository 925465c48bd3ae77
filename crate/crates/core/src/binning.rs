//! Equal-count MOS bins.
//!
//! Continuous MOS labels in [1, 5] are discretized into N ordered bins
//! `[s_i, e_i)` (the last bin closed at 5). Edges sit at quantile cut points
//! snapped to midpoints between adjacent distinct values, so no distinct
//! value ever straddles two bins. A posterior over bins converts back to a
//! MOS value as the center-weighted sum.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BinError {
    #[error("{samples} samples cannot fill {bins} bins with at least {min_count} each")]
    TooFewSamples {
        samples: usize,
        bins: usize,
        min_count: usize,
    },
    #[error("{distinct} distinct values cannot form {bins} non-empty bins")]
    TooFewDistinctValues { distinct: usize, bins: usize },
    #[error("value {value} outside the MOS range [1, 5]")]
    OutOfRange { value: f64 },
    #[error("bin {index} has {count} samples, fewer than min_count {min_count}")]
    UnderfilledBin {
        index: usize,
        count: usize,
        min_count: usize,
    },
    #[error("posterior is not a distribution: {reason}")]
    NotNormalized { reason: String },
    #[error("posterior has {got} entries for {expected} bins")]
    LengthMismatch { got: usize, expected: usize },
    #[error("malformed BinSpec CSV: {reason}")]
    MalformedSpec { reason: String },
}

/// Ordered MOS bins: N+1 edges from 1 to 5, strictly increasing centers at
/// interval midpoints, and per-bin training counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BinSpec {
    /// `edges[i]..edges[i+1]` is bin i; `edges[0] = 1`, `edges[N] = 5`.
    edges: Vec<f64>,
    centers: Vec<f64>,
    counts: Vec<usize>,
}

impl BinSpec {
    pub fn n_bins(&self) -> usize {
        self.centers.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Serializes as CSV rows `index,start,end,center,count` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,start,end,center,count\n");
        for i in 0..self.n_bins() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i,
                self.edges[i],
                self.edges[i + 1],
                self.centers[i],
                self.counts[i]
            ));
        }
        out
    }

    /// Parses the CSV produced by [`BinSpec::to_csv`].
    pub fn from_csv(text: &str) -> Result<BinSpec, BinError> {
        let bad = |reason: &str| BinError::MalformedSpec {
            reason: reason.to_owned(),
        };
        let mut lines = text.lines();
        if lines.next() != Some("index,start,end,center,count") {
            return Err(bad("missing header"));
        }
        let mut edges = Vec::new();
        let mut centers = Vec::new();
        let mut counts = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 5 {
                return Err(bad("wrong cell count"));
            }
            let start: f64 = cells[1].parse().map_err(|_| bad("bad start"))?;
            let end: f64 = cells[2].parse().map_err(|_| bad("bad end"))?;
            if edges.is_empty() {
                edges.push(start);
            }
            edges.push(end);
            centers.push(cells[3].parse().map_err(|_| bad("bad center"))?);
            counts.push(cells[4].parse().map_err(|_| bad("bad count"))?);
        }
        if centers.is_empty() {
            return Err(bad("no bins"));
        }
        Ok(BinSpec {
            edges,
            centers,
            counts,
        })
    }
}

const MOS_MIN: f64 = 1.0;
const MOS_MAX: f64 = 5.0;

/// Fits N equal-count bins over `mos_values`.
///
/// Interior edges are placed at the midpoints between adjacent distinct
/// values nearest to the exact quantile cut points; outer edges are fixed at
/// 1 and 5 so unseen extreme scores remain assignable. Centers are interval
/// midpoints `(s_i + e_i) / 2`. Errors if any bin would receive fewer than
/// `min_count` samples.
pub fn fit_bins(mos_values: &[f64], n_bins: usize, min_count: usize) -> Result<BinSpec, BinError> {
    assert!(n_bins >= 1, "n_bins must be >= 1");
    for &v in mos_values {
        if !(MOS_MIN..=MOS_MAX).contains(&v) {
            return Err(BinError::OutOfRange { value: v });
        }
    }
    let n = mos_values.len();
    if n < n_bins * min_count {
        return Err(BinError::TooFewSamples {
            samples: n,
            bins: n_bins,
            min_count,
        });
    }

    let mut sorted = mos_values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // distinct values with cumulative counts
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for &v in &sorted {
        match distinct.last_mut() {
            Some((last, cum)) if *last == v => *cum += 1,
            _ => {
                let prev = distinct.last().map(|(_, c)| *c).unwrap_or(0);
                distinct.push((v, prev + 1));
            }
        }
    }
    let m = distinct.len();
    if m < n_bins {
        return Err(BinError::TooFewDistinctValues {
            distinct: m,
            bins: n_bins,
        });
    }

    // Pick split indices j_1 < ... < j_{N-1} over distinct values so that the
    // cumulative count at each split is closest to the exact quantile target,
    // while leaving enough distinct values for the remaining bins.
    let mut splits = Vec::with_capacity(n_bins.saturating_sub(1));
    let mut prev_j = 0usize; // number of distinct values consumed so far
    for k in 1..n_bins {
        let target = k as f64 * n as f64 / n_bins as f64;
        let hi = m - (n_bins - k); // leave >= 1 distinct value per later bin
        let mut best_j = prev_j + 1;
        let mut best_diff = f64::INFINITY;
        for j in (prev_j + 1)..=hi {
            let diff = (distinct[j - 1].1 as f64 - target).abs();
            if diff < best_diff {
                best_diff = diff;
                best_j = j;
            }
        }
        splits.push(best_j);
        prev_j = best_j;
    }

    let mut edges = Vec::with_capacity(n_bins + 1);
    edges.push(MOS_MIN);
    for &j in &splits {
        edges.push((distinct[j - 1].0 + distinct[j].0) / 2.0);
    }
    edges.push(MOS_MAX);

    let mut counts = Vec::with_capacity(n_bins);
    let mut prev_cum = 0;
    for &j in splits.iter().chain(std::iter::once(&m)) {
        let cum = distinct[j - 1].1;
        counts.push(cum - prev_cum);
        prev_cum = cum;
    }

    for (index, &count) in counts.iter().enumerate() {
        if count < min_count {
            return Err(BinError::UnderfilledBin {
                index,
                count,
                min_count,
            });
        }
    }

    let centers = (0..n_bins)
        .map(|i| (edges[i] + edges[i + 1]) / 2.0)
        .collect();
    Ok(BinSpec {
        edges,
        centers,
        counts,
    })
}

/// Maps a MOS value to its bin index: the unique i with
/// `s_i <= mos < e_i`, with the last bin closed at 5.
pub fn assign_bin(spec: &BinSpec, mos: f64) -> Result<usize, BinError> {
    if !(MOS_MIN..=MOS_MAX).contains(&mos) {
        return Err(BinError::OutOfRange { value: mos });
    }
    let n = spec.n_bins();
    // edges are sorted; find the last edge <= mos
    let mut idx = match spec.edges[..n].binary_search_by(|e| e.partial_cmp(&mos).unwrap()) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    if idx >= n {
        idx = n - 1;
    }
    Ok(idx)
}

/// Posterior-weighted MOS: the sum of bin centers weighted by the posterior.
/// The posterior must be non-negative and sum to 1 within 1e-9.
pub fn expected_mos(spec: &BinSpec, posterior: &[f64]) -> Result<f64, BinError> {
    if posterior.len() != spec.n_bins() {
        return Err(BinError::LengthMismatch {
            got: posterior.len(),
            expected: spec.n_bins(),
        });
    }
    if let Some(p) = posterior.iter().find(|p| **p < 0.0 || !p.is_finite()) {
        return Err(BinError::NotNormalized {
            reason: format!("entry {p} is negative or non-finite"),
        });
    }
    let sum: f64 = posterior.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(BinError::NotNormalized {
            reason: format!("sum {sum} differs from 1 by more than 1e-9"),
        });
    }
    Ok(spec.centers.iter().zip(posterior).map(|(c, p)| c * p).sum())
}
