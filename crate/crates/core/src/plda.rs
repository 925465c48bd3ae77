//! Two-covariance PLDA over head features.
//!
//! Each MOS bin is a class whose mean is drawn from `N(m, between)` and
//! whose observations scatter with covariance `within`. Estimation is by
//! moments: the pooled within-class scatter (regularized with a relative
//! ridge) and the scatter of class means around the grand mean with the
//! `within / n_mean` sampling correction subtracted and eigenvalues floored
//! at zero. Scoring uses the posterior-predictive density per bin
//!
//! ```text
//! Sigma_post_i = (between^-1 + n_i * within^-1)^-1
//! mu_i   = Sigma_post_i * (between^-1 m + n_i within^-1 xbar_i)
//! x | bin i ~ N(mu_i, Sigma_post_i + within)
//! ```
//!
//! evaluated in log space with max subtraction, so bin sample sizes temper
//! confidence. The predicted MOS is the posterior-weighted sum of bin
//! centers.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::binning::{expected_mos, BinError, BinSpec};

#[derive(Debug, Error)]
pub enum PldaError {
    #[error("no feature vectors")]
    NoFeatures,
    #[error("feature dim {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature dim {dim} exceeds sample count {samples}")]
    TooFewSamples { dim: usize, samples: usize },
    #[error("bin {index} has no feature vectors")]
    MissingBin { index: usize },
    #[error("bin {index} has {count} feature vectors, fewer than {min_count}")]
    TooFewInBin {
        index: usize,
        count: usize,
        min_count: usize,
    },
    #[error("label {label} outside the {bins} fitted bins")]
    BadLabel { label: usize, bins: usize },
    #[error("within-class covariance is singular even after regularization")]
    SingularWithinClass,
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error("model file {path}: {reason}")]
    BadModelFile { path: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-bin sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    pub count: usize,
    pub mean: DVector<f64>,
}

/// Cached per-bin scoring quantities (rebuilt on load, never serialized).
#[derive(Debug, Clone)]
struct BinScoring {
    mu: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `ln prior - 0.5 (F ln 2 pi + ln det Sigma)`
    log_norm: f64,
}

/// A fitted PLDA model with its bin spec and class prior.
#[derive(Debug, Clone)]
pub struct PldaModel {
    pub feature_dim: usize,
    pub mean: DVector<f64>,
    /// Between-class covariance, symmetric PSD.
    pub between: DMatrix<f64>,
    /// Within-class covariance, symmetric PD after regularization.
    pub within: DMatrix<f64>,
    pub bins: Vec<BinStats>,
    pub prior: Vec<f64>,
    pub spec: BinSpec,
    scoring: Vec<BinScoring>,
}

impl PartialEq for PldaModel {
    fn eq(&self, other: &Self) -> bool {
        self.feature_dim == other.feature_dim
            && self.mean == other.mean
            && self.between == other.between
            && self.within == other.within
            && self.bins == other.bins
            && self.prior == other.prior
            && self.spec == other.spec
    }
}

/// Moment-method PLDA fit over `(feature, bin label)` pairs. Every bin of
/// `spec` must contribute at least `min_count` vectors.
pub fn fit_plda(
    features: &[(DVector<f64>, usize)],
    spec: BinSpec,
    min_count: usize,
) -> Result<PldaModel, PldaError> {
    let n = features.len();
    let n_bins = spec.n_bins();
    if n == 0 {
        return Err(PldaError::NoFeatures);
    }
    let dim = features[0].0.len();
    for (x, label) in features {
        if x.len() != dim {
            return Err(PldaError::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        if *label >= n_bins {
            return Err(PldaError::BadLabel {
                label: *label,
                bins: n_bins,
            });
        }
    }
    if dim > n {
        return Err(PldaError::TooFewSamples { dim, samples: n });
    }

    let mut counts = vec![0usize; n_bins];
    let mut sums = vec![DVector::<f64>::zeros(dim); n_bins];
    let mut grand = DVector::<f64>::zeros(dim);
    for (x, label) in features {
        counts[*label] += 1;
        sums[*label] += x;
        grand += x;
    }
    for (index, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(PldaError::MissingBin { index });
        }
        if count < min_count {
            return Err(PldaError::TooFewInBin {
                index,
                count,
                min_count,
            });
        }
    }
    let mean = grand / n as f64;
    let bins: Vec<BinStats> = counts
        .iter()
        .zip(&sums)
        .map(|(&count, sum)| BinStats {
            count,
            mean: sum / count as f64,
        })
        .collect();

    // pooled within-class scatter / (n - N)
    if n <= n_bins {
        return Err(PldaError::SingularWithinClass);
    }
    let mut within = DMatrix::<f64>::zeros(dim, dim);
    for (x, label) in features {
        let d = x - &bins[*label].mean;
        within.ger(1.0, &d, &d, 1.0);
    }
    within /= (n - n_bins) as f64;
    let trace: f64 = within.diagonal().sum();
    let epsilon = if trace > 0.0 {
        1e-6 * trace / dim as f64
    } else {
        1e-6
    };
    for i in 0..dim {
        within[(i, i)] += epsilon;
    }

    // scatter of class means around the grand mean, with the within / n_mean
    // sampling correction subtracted and eigenvalues floored at zero
    let mut between = DMatrix::<f64>::zeros(dim, dim);
    for stats in &bins {
        let d = &stats.mean - &mean;
        between.ger(1.0, &d, &d, 1.0);
    }
    between /= n_bins as f64;
    let n_mean = n as f64 / n_bins as f64;
    between -= &within / n_mean;
    between = floor_eigenvalues(&between, 0.0);

    let prior = vec![1.0 / n_bins as f64; n_bins];
    PldaModel::assemble(dim, mean, between, within, bins, prior, spec)
}

impl PldaModel {
    fn assemble(
        feature_dim: usize,
        mean: DVector<f64>,
        between: DMatrix<f64>,
        within: DMatrix<f64>,
        bins: Vec<BinStats>,
        prior: Vec<f64>,
        spec: BinSpec,
    ) -> Result<PldaModel, PldaError> {
        let within_chol = Cholesky::new(within.clone()).ok_or(PldaError::SingularWithinClass)?;
        let within_inv = within_chol.inverse();

        // between may have zero eigenvalues; invert with a tiny floor so a
        // vanishing prior direction degrades gracefully
        let scale = between.diagonal().sum() / feature_dim as f64
            + within.diagonal().sum() / feature_dim as f64;
        let between_inv = invert_floored(&between, scale * 1e-10 + 1e-300);

        let prior_mean_term = &between_inv * &mean;
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let scoring = bins
            .iter()
            .zip(&prior)
            .map(|(stats, p)| {
                let n_i = stats.count as f64;
                let precision = &between_inv + &within_inv * n_i;
                let sigma_post = Cholesky::new(precision)
                    .ok_or(PldaError::SingularWithinClass)?
                    .inverse();
                let mu = &sigma_post * (&prior_mean_term + (&within_inv * &stats.mean) * n_i);
                let sigma = sigma_post + &within;
                let chol = Cholesky::new(sigma).ok_or(PldaError::SingularWithinClass)?;
                let ln_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
                Ok(BinScoring {
                    mu,
                    chol,
                    log_norm: p.ln() - 0.5 * (feature_dim as f64 * ln_2pi + ln_det),
                })
            })
            .collect::<Result<Vec<_>, PldaError>>()?;

        Ok(PldaModel {
            feature_dim,
            mean,
            between,
            within,
            bins,
            prior,
            spec,
            scoring,
        })
    }

    /// Posterior over bins for one feature vector, computed in log space
    /// with max subtraction.
    pub fn posterior(&self, x: &DVector<f64>) -> Result<Vec<f64>, PldaError> {
        if x.len() != self.feature_dim {
            return Err(PldaError::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        let log_post: Vec<f64> = self
            .scoring
            .iter()
            .map(|bin| {
                let diff = x - &bin.mu;
                let solved = bin.chol.solve(&diff);
                bin.log_norm - 0.5 * diff.dot(&solved)
            })
            .collect();
        let max = log_post.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let unnorm: Vec<f64> = log_post.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = unnorm.iter().sum();
        Ok(unnorm.into_iter().map(|p| p / sum).collect())
    }

    /// Posterior-weighted MOS prediction, always within the bin-center range.
    pub fn predict_mos(&self, x: &DVector<f64>) -> Result<f64, PldaError> {
        let posterior = self.posterior(x)?;
        Ok(expected_mos(&self.spec, &posterior)?)
    }

    /// Posterior variance of the bin-center value; a simple spread measure
    /// to report beside the prediction.
    pub fn predict_variance(&self, x: &DVector<f64>) -> Result<f64, PldaError> {
        let posterior = self.posterior(x)?;
        let mean: f64 = self
            .spec
            .centers()
            .iter()
            .zip(&posterior)
            .map(|(c, p)| c * p)
            .sum();
        Ok(self
            .spec
            .centers()
            .iter()
            .zip(&posterior)
            .map(|(c, p)| p * (c - mean) * (c - mean))
            .sum())
    }
}

/// Symmetric eigendecomposition with eigenvalues clamped to at least
/// `floor`, recomposed.
fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clamped = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| v.max(floor)),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// Inverse through the symmetric eigendecomposition with eigenvalues floored
/// at `floor` before reciprocation.
fn invert_floored(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let inverted = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| 1.0 / v.max(floor)),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&inverted) * eig.eigenvectors.transpose()
}

const MAGIC: &[u8; 4] = b"MNPL";
const VERSION: u32 = 1;

fn bad(path: &Path, reason: impl Into<String>) -> PldaError {
    PldaError::BadModelFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Writes the model: magic `MNPL`, u32 version, u32 F, u32 N, then mean,
/// between, within (row-major), per-bin `u32 count` + mean, prior, and the
/// embedded BinSpec CSV (u32 length + bytes). All floats little-endian f64.
pub fn save_model(path: &Path, model: &PldaModel) -> Result<(), PldaError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(model.feature_dim as u32)?;
    w.write_u32::<LE>(model.spec.n_bins() as u32)?;
    for v in model.mean.iter() {
        w.write_f64::<LE>(*v)?;
    }
    for m in [&model.between, &model.within] {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_f64::<LE>(m[(i, j)])?;
            }
        }
    }
    for stats in &model.bins {
        w.write_u32::<LE>(stats.count as u32)?;
        for v in stats.mean.iter() {
            w.write_f64::<LE>(*v)?;
        }
    }
    for p in &model.prior {
        w.write_f64::<LE>(*p)?;
    }
    let csv = model.spec.to_csv();
    w.write_u32::<LE>(csv.len() as u32)?;
    w.write_all(csv.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PldaModel, PldaError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(bad(path, "bad magic, expected MNPL"));
    }
    let te = |_| bad(path, "truncated");
    let version = r.read_u32::<LE>().map_err(te)?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let dim = r.read_u32::<LE>().map_err(te)? as usize;
    let n_bins = r.read_u32::<LE>().map_err(te)? as usize;
    if dim == 0 || n_bins == 0 {
        return Err(bad(path, "zero dimensions"));
    }

    let read_vec =
        |r: &mut BufReader<std::fs::File>, len: usize| -> Result<DVector<f64>, PldaError> {
            let mut v = DVector::zeros(len);
            for i in 0..len {
                v[i] = r.read_f64::<LE>().map_err(|_| bad(path, "truncated"))?;
            }
            Ok(v)
        };
    let mean = read_vec(&mut r, dim)?;
    let read_mat = |r: &mut BufReader<std::fs::File>| -> Result<DMatrix<f64>, PldaError> {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = r.read_f64::<LE>().map_err(|_| bad(path, "truncated"))?;
            }
        }
        Ok(m)
    };
    let between = read_mat(&mut r)?;
    let within = read_mat(&mut r)?;
    let mut bins = Vec::with_capacity(n_bins);
    for _ in 0..n_bins {
        let count = r.read_u32::<LE>().map_err(te)? as usize;
        let mean = read_vec(&mut r, dim)?;
        bins.push(BinStats { count, mean });
    }
    let mut prior = Vec::with_capacity(n_bins);
    for _ in 0..n_bins {
        prior.push(r.read_f64::<LE>().map_err(te)?);
    }
    let csv_len = r.read_u32::<LE>().map_err(te)? as usize;
    let mut csv = vec![0u8; csv_len];
    r.read_exact(&mut csv).map_err(te)?;
    let csv = String::from_utf8(csv).map_err(|_| bad(path, "BinSpec block not utf-8"))?;
    let spec = BinSpec::from_csv(&csv).map_err(|e| bad(path, e.to_string()))?;
    if spec.n_bins() != n_bins {
        return Err(bad(path, "BinSpec bin count mismatch"));
    }

    PldaModel::assemble(dim, mean, between, within, bins, prior, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::fit_bins;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Two 1-D classes at -1 and +1 with within-variance 0.25, mapped onto a
    /// 2-bin spec.
    fn two_class_1d(seed: u64, per_class: usize) -> (Vec<(DVector<f64>, usize)>, BinSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // MOS values 2 and 4 -> two bins
        let values: Vec<f64> = (0..per_class)
            .map(|_| 2.0)
            .chain((0..per_class).map(|_| 4.0))
            .collect();
        let spec = fit_bins(&values, 2, 1).unwrap();
        let mut features = Vec::with_capacity(2 * per_class);
        for class in 0..2usize {
            let center = if class == 0 { -1.0 } else { 1.0 };
            for _ in 0..per_class {
                let z: f64 = rng.sample(StandardNormal);
                features.push((DVector::from_vec(vec![center + 0.5 * z]), class));
            }
        }
        (features, spec)
    }

    #[test]
    fn moment_estimates_match_generator() {
        let (features, spec) = two_class_1d(11, 1000);
        let model = fit_plda(&features, spec, 5).unwrap();
        let within = model.within[(0, 0)];
        let between = model.between[(0, 0)];
        assert!((within - 0.25).abs() < 0.05, "within {within}");
        assert!((between - 1.0).abs() < 0.15, "between {between}");
    }

    #[test]
    fn posterior_is_normalized_and_separates_classes() {
        let (features, spec) = two_class_1d(13, 1000);
        let model = fit_plda(&features, spec, 5).unwrap();

        let p = model.posterior(&DVector::from_vec(vec![0.37])).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let p = model.posterior(&DVector::from_vec(vec![-1.0])).unwrap();
        assert!(p[0] > 0.99, "negative-class posterior {}", p[0]);

        // held-out classification accuracy
        let (held_out, _) = two_class_1d(14, 500);
        let correct = held_out
            .iter()
            .filter(|(x, label)| {
                let p = model.posterior(x).unwrap();
                usize::from(p[1] > p[0]) == *label
            })
            .count();
        let accuracy = correct as f64 / held_out.len() as f64;
        assert!(accuracy >= 0.95, "accuracy {accuracy}");
    }

    #[test]
    fn symmetric_point_splits_evenly() {
        // perfectly symmetric training set
        let spec = fit_bins(&[2.0, 2.0, 4.0, 4.0], 2, 1).unwrap();
        let features = vec![
            (DVector::from_vec(vec![-1.5]), 0),
            (DVector::from_vec(vec![-0.5]), 0),
            (DVector::from_vec(vec![0.5]), 1),
            (DVector::from_vec(vec![1.5]), 1),
        ];
        let model = fit_plda(&features, spec, 1).unwrap();
        let p = model.posterior(&DVector::from_vec(vec![0.0])).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9, "posterior {p:?}");
        assert_relative_eq!(
            model.predict_mos(&DVector::from_vec(vec![0.0])).unwrap(),
            (model.spec.centers()[0] + model.spec.centers()[1]) / 2.0,
            max_relative = 1e-9
        );
    }

    #[test]
    fn identical_features_within_classes_hit_the_ridge_floor() {
        let spec = fit_bins(&[2.0, 2.0, 4.0, 4.0], 2, 1).unwrap();
        let features = vec![
            (DVector::from_vec(vec![-1.0, 0.0]), 0),
            (DVector::from_vec(vec![-1.0, 0.0]), 0),
            (DVector::from_vec(vec![1.0, 0.5]), 1),
            (DVector::from_vec(vec![1.0, 0.5]), 1),
        ];
        let model = fit_plda(&features, spec, 1).unwrap();
        // zero scatter -> within is exactly the absolute ridge
        assert_relative_eq!(model.within[(0, 0)], 1e-6, max_relative = 1e-9);
        assert_relative_eq!(model.within[(1, 1)], 1e-6, max_relative = 1e-9);
        assert_eq!(model.within[(0, 1)], 0.0);
    }

    #[test]
    fn missing_bin_is_an_error() {
        let spec = fit_bins(&[2.0, 2.0, 4.0, 4.0], 2, 1).unwrap();
        let features = vec![
            (DVector::from_vec(vec![0.1]), 0),
            (DVector::from_vec(vec![0.2]), 0),
        ];
        assert!(matches!(
            fit_plda(&features, spec, 1),
            Err(PldaError::MissingBin { index: 1 })
        ));
    }

    /// Naive multivariate-normal oracle: explicit LU inverses and
    /// determinants, linear-space normalization.
    fn oracle_posterior(model: &PldaModel, x: &DVector<f64>) -> Vec<f64> {
        let between_inv = model.between.clone().try_inverse().unwrap();
        let within_inv = model.within.clone().try_inverse().unwrap();
        let dim = model.feature_dim as f64;
        let mut likes = Vec::new();
        for (stats, prior) in model.bins.iter().zip(&model.prior) {
            let n_i = stats.count as f64;
            let precision = &between_inv + &within_inv * n_i;
            let sigma_post = precision.try_inverse().unwrap();
            let mu = &sigma_post * (&between_inv * &model.mean + (&within_inv * &stats.mean) * n_i);
            let sigma = &sigma_post + &model.within;
            let det = sigma.determinant();
            let sigma_inv = sigma.try_inverse().unwrap();
            let diff = x - mu;
            let quad = (diff.transpose() * &sigma_inv * &diff)[(0, 0)];
            let density =
                (-0.5 * quad).exp() / ((2.0 * std::f64::consts::PI).powf(dim / 2.0) * det.sqrt());
            likes.push(prior * density);
        }
        let sum: f64 = likes.iter().sum();
        likes.into_iter().map(|l| l / sum).collect()
    }

    #[test]
    fn matches_naive_multivariate_normal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let spec = fit_bins(&[1.5, 1.5, 3.0, 3.0, 4.5, 4.5], 3, 1).unwrap();
        // non-collinear class means keep the between matrix full rank
        let means = [(-2.0, 1.0), (0.0, -1.2), (2.0, 0.8)];
        let mut features = Vec::new();
        for (class, (mx, my)) in means.iter().enumerate() {
            for _ in 0..30 {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                features.push((DVector::from_vec(vec![mx + 0.4 * z0, my + 0.3 * z1]), class));
            }
        }
        let model = fit_plda(&features, spec, 5).unwrap();
        for _ in 0..20 {
            let x = DVector::from_vec(vec![
                rng.random_range(-3.0..3.0),
                rng.random_range(-2.0..2.0),
            ]);
            let fast = model.posterior(&x).unwrap();
            let slow = oracle_posterior(&model, &x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
            let mos = model.predict_mos(&x).unwrap();
            let oracle_mos: f64 = model
                .spec
                .centers()
                .iter()
                .zip(&slow)
                .map(|(c, p)| c * p)
                .sum();
            assert!((mos - oracle_mos).abs() < 1e-8);
            let centers = model.spec.centers();
            assert!(mos >= centers[0] && mos <= centers[centers.len() - 1]);
        }
    }

    #[test]
    fn decisions_are_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = fit_bins(&[1.5, 1.5, 3.0, 3.0, 4.5, 4.5], 3, 1).unwrap();
        let means = [(0.0, 0.0), (1.5, 0.8), (3.0, -0.5)];
        let mut features = Vec::new();
        for (class, (mx, my)) in means.iter().enumerate() {
            for _ in 0..40 {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                features.push((DVector::from_vec(vec![mx + 0.5 * z0, my + 0.5 * z1]), class));
            }
        }
        // a well-conditioned invertible affine map
        let a = DMatrix::from_row_slice(2, 2, &[1.3, 0.4, -0.2, 0.9]);
        let b = DVector::from_vec(vec![5.0, -2.0]);
        let mapped: Vec<(DVector<f64>, usize)> =
            features.iter().map(|(x, l)| (&a * x + &b, *l)).collect();

        let model = fit_plda(&features, spec.clone(), 1).unwrap();
        let model_mapped = fit_plda(&mapped, spec, 1).unwrap();
        for _ in 0..10 {
            let x = DVector::from_vec(vec![
                rng.random_range(-1.0..4.0),
                rng.random_range(-1.5..1.5),
            ]);
            let p = model.posterior(&x).unwrap();
            let q = model_mapped.posterior(&(&a * &x + &b)).unwrap();
            for (u, v) in p.iter().zip(&q) {
                // the relative ridge on the within covariance is the only
                // non-covariant term and bounds the deviation
                assert!((u - v).abs() < 5e-6, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn accuracy_tracks_plug_in_bayes_on_generative_data() {
        // three well-separated classes (between/within variance ratio >= 4)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centers = [-2.0, 0.0, 2.0]; // between-spread 2.67 vs within 0.25
        let mos = [1.5, 3.0, 4.5];
        let spec = fit_bins(
            &mos.iter()
                .flat_map(|m| std::iter::repeat_n(*m, 2))
                .collect::<Vec<_>>(),
            3,
            1,
        )
        .unwrap();
        let sample = |rng: &mut ChaCha8Rng, n| {
            let mut out = Vec::new();
            for (class, c) in centers.iter().enumerate() {
                for _ in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    out.push((DVector::from_vec(vec![c + 0.5 * z]), class));
                }
            }
            out
        };
        let train = sample(&mut rng, 200);
        let test = sample(&mut rng, 300);
        let model = fit_plda(&train, spec, 5).unwrap();

        let model_acc = test
            .iter()
            .filter(|(x, l)| {
                let p = model.posterior(x).unwrap();
                p.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
                    == *l
            })
            .count() as f64
            / test.len() as f64;
        // plug-in Bayes: classify with the true generating densities
        let bayes_acc = test
            .iter()
            .filter(|(x, l)| {
                let best = centers
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (x[0] - a.1).abs().partial_cmp(&(x[0] - b.1).abs()).unwrap())
                    .unwrap()
                    .0;
                best == *l
            })
            .count() as f64
            / test.len() as f64;
        assert!(
            model_acc >= bayes_acc - 0.03,
            "model {model_acc} vs bayes {bayes_acc}"
        );
    }

    #[test]
    fn no_overflow_for_large_feature_norms() {
        let (features, spec) = two_class_1d(3, 200);
        let model = fit_plda(&features, spec, 5).unwrap();
        let p = model.posterior(&DVector::from_vec(vec![1e3])).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn model_file_round_trips() {
        let (features, spec) = two_class_1d(9, 100);
        let model = fit_plda(&features, spec, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mnpl");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);

        // bit-identical predictions after a reload
        let x = DVector::from_vec(vec![0.123456789]);
        assert_eq!(
            model.predict_mos(&x).unwrap().to_bits(),
            loaded.predict_mos(&x).unwrap().to_bits()
        );

        // and a second save reproduces the bytes
        let path2 = dir.path().join("model2.mnpl");
        save_model(&path2, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );

        std::fs::write(&path, b"MNPLxx").unwrap();
        assert!(matches!(
            load_model(&path),
            Err(PldaError::BadModelFile { .. })
        ));
    }
}
