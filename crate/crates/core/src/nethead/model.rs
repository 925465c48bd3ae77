//! Head parameters, pooling, and the forward pass.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::NetError;
use crate::dataset::EmbeddingSequence;

/// Scalar projection from the hidden layer: `w . h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub w: DVector<f64>,
    pub b: f64,
}

impl Projection {
    fn apply(&self, h: &DVector<f64>) -> f64 {
        self.w.dot(h) + self.b
    }
}

/// Listener embedding table. Row `ids.len()` is the UNK embedding used at
/// inference time and for utterances without a listener id.
#[derive(Debug, Clone, PartialEq)]
pub struct ListenerTable {
    pub ids: Vec<String>,
    /// `(L + 1) x E`, one row per listener plus the UNK row.
    pub emb: DMatrix<f64>,
}

impl ListenerTable {
    pub fn emb_dim(&self) -> usize {
        self.emb.ncols()
    }

    pub fn unk_row(&self) -> usize {
        self.ids.len()
    }

    /// Row for a listener id; unknown ids map to the UNK row.
    pub fn row_for(&self, listener_id: &str) -> usize {
        self.ids
            .iter()
            .position(|id| id == listener_id)
            .unwrap_or_else(|| self.unk_row())
    }
}

/// Per-task outputs of one forward pass. `hidden` is the post-ReLU
/// activation used as the PLDA feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub mos_mean: f64,
    pub mos_logvar: f64,
    pub stoi: f64,
    pub snr: f64,
    pub noise_logits: DVector<f64>,
    pub hidden: DVector<f64>,
}

/// Pooling + one hidden layer + per-task projections + optional listener
/// embeddings. All parameters are f64 values on the f32 grid (see
/// [`PredictorHead::quantize_f32`]).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorHead {
    /// Dimension of the pooled embedding (excluding any listener embedding).
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_noise_classes: usize,
    /// `hidden_dim x (input_dim + emb_dim)` when listeners are present,
    /// otherwise `hidden_dim x input_dim`.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub mos_mean: Projection,
    pub mos_logvar: Projection,
    pub stoi: Projection,
    pub snr: Projection,
    pub noise_w: DMatrix<f64>,
    pub noise_b: DVector<f64>,
    pub listeners: Option<ListenerTable>,
}

/// Trace of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub input: DVector<f64>,
    pub preact: DVector<f64>,
    pub outputs: HeadOutputs,
    pub listener_row: Option<usize>,
}

/// Global pooling: elementwise max over frames plus elementwise mean over
/// frames. Invariant to frame permutation.
pub fn pool(emb: &EmbeddingSequence) -> Result<DVector<f64>, NetError> {
    let frames = emb.frames();
    if frames == 0 {
        return Err(NetError::EmptySequence);
    }
    let dim = emb.dim();
    let mut pooled = DVector::zeros(dim);
    for d in 0..dim {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for t in 0..frames {
            let v = emb.data[(t, d)];
            if v > max {
                max = v;
            }
            sum += v;
        }
        pooled[d] = max + sum / frames as f64;
    }
    Ok(pooled)
}

impl PredictorHead {
    /// Fresh head with Xavier-uniform weights and zero biases, quantized to
    /// the f32 grid. `listeners` gives the listener ids and embedding size
    /// for listener-dependent training.
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        n_noise_classes: usize,
        listeners: Option<(Vec<String>, usize)>,
        rng: &mut impl Rng,
    ) -> PredictorHead {
        let listeners = listeners.map(|(ids, emb_dim)| {
            let rows = ids.len() + 1;
            let emb = DMatrix::from_fn(rows, emb_dim, |_, _| rng.random_range(-0.1..0.1));
            ListenerTable { ids, emb }
        });
        let full_input = input_dim + listeners.as_ref().map_or(0, |t| t.emb_dim());

        // Xavier-uniform fan-in/fan-out init, biases zero
        let mut w1 = DMatrix::zeros(hidden_dim, full_input);
        let a1 = (6.0 / (hidden_dim + full_input) as f64).sqrt();
        for v in w1.iter_mut() {
            *v = rng.random_range(-a1..a1);
        }
        let mut proj = |dim: usize| {
            let a = (6.0 / (dim + 1) as f64).sqrt();
            let mut w = DVector::zeros(dim);
            for v in w.iter_mut() {
                *v = rng.random_range(-a..a);
            }
            Projection { w, b: 0.0 }
        };
        let mos_mean = proj(hidden_dim);
        let mos_logvar = proj(hidden_dim);
        let stoi = proj(hidden_dim);
        let snr = proj(hidden_dim);
        let mut noise_w = DMatrix::zeros(n_noise_classes, hidden_dim);
        let an = (6.0 / (n_noise_classes + hidden_dim) as f64).sqrt();
        for v in noise_w.iter_mut() {
            *v = rng.random_range(-an..an);
        }

        let mut head = PredictorHead {
            input_dim,
            hidden_dim,
            n_noise_classes,
            w1,
            b1: DVector::zeros(hidden_dim),
            mos_mean,
            mos_logvar,
            stoi,
            snr,
            noise_w,
            noise_b: DVector::zeros(n_noise_classes),
            listeners,
        };
        head.quantize_f32();
        head
    }

    /// Width of the hidden layer's input: pooled dim plus listener embedding
    /// dim when present.
    pub fn full_input_dim(&self) -> usize {
        self.input_dim + self.listeners.as_ref().map_or(0, |t| t.emb_dim())
    }

    /// Forward pass for one pooled vector. With a listener table, `listener`
    /// selects the embedding row (unknown or absent ids use UNK).
    pub fn forward(
        &self,
        pooled: &DVector<f64>,
        listener: Option<&str>,
    ) -> Result<HeadOutputs, NetError> {
        let row = match (&self.listeners, listener) {
            (Some(table), Some(id)) => Some(table.row_for(id)),
            (Some(table), None) => Some(table.unk_row()),
            (None, Some(_)) => return Err(NetError::ListenerWithoutTable),
            (None, None) => None,
        };
        Ok(self.forward_trace(pooled, row)?.outputs)
    }

    pub(crate) fn forward_trace(
        &self,
        pooled: &DVector<f64>,
        listener_row: Option<usize>,
    ) -> Result<ForwardTrace, NetError> {
        if pooled.len() != self.input_dim {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim,
                got: pooled.len(),
            });
        }
        let input = match (&self.listeners, listener_row) {
            (Some(table), row) => {
                let row = row.unwrap_or_else(|| table.unk_row());
                let mut v = DVector::zeros(self.full_input_dim());
                v.rows_mut(0, self.input_dim).copy_from(pooled);
                for e in 0..table.emb_dim() {
                    v[self.input_dim + e] = table.emb[(row, e)];
                }
                v
            }
            (None, _) => pooled.clone(),
        };
        let preact = &self.w1 * &input + &self.b1;
        let hidden = preact.map(|v| v.max(0.0));
        let outputs = HeadOutputs {
            mos_mean: self.mos_mean.apply(&hidden),
            mos_logvar: self.mos_logvar.apply(&hidden),
            stoi: self.stoi.apply(&hidden),
            snr: self.snr.apply(&hidden),
            noise_logits: &self.noise_w * &hidden + &self.noise_b,
            hidden,
        };
        let listener_row = self.listeners.as_ref().map(|t| match listener_row {
            Some(r) => r,
            None => t.unk_row(),
        });
        Ok(ForwardTrace {
            input,
            preact,
            outputs,
            listener_row,
        })
    }

    /// Parameter tensors in checkpoint order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut groups: Vec<&[f64]> = vec![
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.mos_mean.w.as_slice(),
            std::slice::from_ref(&self.mos_mean.b),
            self.mos_logvar.w.as_slice(),
            std::slice::from_ref(&self.mos_logvar.b),
            self.stoi.w.as_slice(),
            std::slice::from_ref(&self.stoi.b),
            self.snr.w.as_slice(),
            std::slice::from_ref(&self.snr.b),
            self.noise_w.as_slice(),
            self.noise_b.as_slice(),
        ];
        if let Some(table) = &self.listeners {
            groups.push(table.emb.as_slice());
        }
        groups
    }

    /// Mutable view of the parameter tensors, aligned with [`Self::params`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut groups: Vec<&mut [f64]> = vec![
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.mos_mean.w.as_mut_slice(),
            std::slice::from_mut(&mut self.mos_mean.b),
            self.mos_logvar.w.as_mut_slice(),
            std::slice::from_mut(&mut self.mos_logvar.b),
            self.stoi.w.as_mut_slice(),
            std::slice::from_mut(&mut self.stoi.b),
            self.snr.w.as_mut_slice(),
            std::slice::from_mut(&mut self.snr.b),
            self.noise_w.as_mut_slice(),
            self.noise_b.as_mut_slice(),
        ];
        if let Some(table) = &mut self.listeners {
            groups.push(table.emb.as_mut_slice());
        }
        groups
    }

    /// Snaps every parameter to its nearest f32 value. Keeping parameters on
    /// the f32 grid makes the f32 checkpoint round trip exact while all
    /// arithmetic stays f64.
    pub fn quantize_f32(&mut self) {
        for group in self.params_mut() {
            for v in group {
                *v = f64::from(*v as f32);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb(rows: usize, cols: usize, data: &[f64]) -> EmbeddingSequence {
        EmbeddingSequence {
            utt_id: "u".into(),
            data: DMatrix::from_row_slice(rows, cols, data),
        }
    }

    #[test]
    fn pool_single_frame_doubles_vector() {
        let pooled = pool(&emb(1, 3, &[0.5, -1.0, 2.0])).unwrap();
        assert_eq!(pooled.as_slice(), &[1.0, -2.0, 4.0]);
    }

    #[test]
    fn pool_max_plus_mean() {
        let pooled = pool(&emb(2, 2, &[0.0, 2.0, 2.0, 0.0])).unwrap();
        assert_eq!(pooled.as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn pool_is_permutation_invariant() {
        let a = pool(&emb(3, 2, &[1.0, -2.0, 0.5, 4.0, -1.0, 0.0])).unwrap();
        let b = pool(&emb(3, 2, &[-1.0, 0.0, 1.0, -2.0, 0.5, 4.0])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_head_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = PredictorHead::init(3, 2, 2, None, &mut rng);
        for group in head.params_mut() {
            group.fill(0.0);
        }
        let out = head
            .forward(&DVector::from_vec(vec![1.0, -1.0, 0.5]), None)
            .unwrap();
        assert_eq!(out.mos_mean, 0.0);
        assert_eq!(out.mos_logvar, 0.0);
        assert!(out.hidden.iter().all(|v| *v == 0.0));
        assert!(out.noise_logits.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_set_one_by_one_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = PredictorHead::init(1, 1, 2, None, &mut rng);
        head.w1[(0, 0)] = 2.0;
        head.b1[0] = -1.0;
        head.mos_mean = Projection {
            w: DVector::from_vec(vec![3.0]),
            b: 0.5,
        };
        // input 2.0: preact = 2*2 - 1 = 3, hidden = 3, mos = 3*3 + 0.5 = 9.5
        let out = head.forward(&DVector::from_vec(vec![2.0]), None).unwrap();
        assert_eq!(out.hidden[0], 3.0);
        assert_eq!(out.mos_mean, 9.5);
        // input -1.0: preact = -3, ReLU clamps to 0, mos = 0.5
        let out = head.forward(&DVector::from_vec(vec![-1.0]), None).unwrap();
        assert_eq!(out.hidden[0], 0.0);
        assert_eq!(out.mos_mean, 0.5);
    }

    #[test]
    fn unknown_listener_maps_to_unk_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head =
            PredictorHead::init(2, 2, 2, Some((vec!["l1".into(), "l2".into()], 2)), &mut rng);
        // keep both hidden units active so listener rows can show through
        head.b1.fill(1.0);
        let pooled = DVector::from_vec(vec![0.3, -0.7]);
        let with_unknown = head.forward(&pooled, Some("nobody")).unwrap();
        let without = head.forward(&pooled, None).unwrap();
        assert_eq!(with_unknown, without);
        let known = head.forward(&pooled, Some("l1")).unwrap();
        assert_ne!(known, without);
    }

    #[test]
    fn listener_without_table_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = PredictorHead::init(2, 2, 2, None, &mut rng);
        assert!(matches!(
            head.forward(&DVector::from_vec(vec![0.0, 0.0]), Some("l1")),
            Err(NetError::ListenerWithoutTable)
        ));
    }

    #[test]
    fn dimension_mismatch_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = PredictorHead::init(3, 2, 2, None, &mut rng);
        assert!(matches!(
            head.forward(&DVector::from_vec(vec![0.0; 2]), None),
            Err(NetError::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
    }
}
