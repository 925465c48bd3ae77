//! Multi-task losses and exact batch gradients.
//!
//! The batch loss is
//!
//! ```text
//! w_mos * mos + w_contrast * contrastive
//!   + w_stoi * stoi + w_snr * snr + w_noise * noise
//! ```
//!
//! where each component is a mean over its contributing items: MOS over all
//! items, STOI over items carrying a target, SNR and noise classification
//! over noisy-variant items only. Items without a target contribute zero
//! loss and zero gradient. Listener-conditioned items add a second forward
//! pass (listener embedding, individual rating target) averaged with the
//! UNK pass inside the item's MOS loss; per-task heads and the contrastive
//! term read the UNK pass.

use nalgebra::{DMatrix, DVector};

use super::model::{ForwardTrace, ListenerTable, PredictorHead, Projection};
use super::NetError;
use crate::batching::Variant;
use crate::config::MosLossKind;

/// Non-negative weights of the loss components; `mos` must be positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mos: f64,
    pub contrast: f64,
    pub stoi: f64,
    pub snr: f64,
    pub noise: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mos: 1.0,
            contrast: 0.5,
            stoi: 0.1,
            snr: 0.1,
            noise: 0.1,
        }
    }
}

/// Everything `loss_total` needs besides the batch itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub kind: MosLossKind,
    pub tau: f64,
    pub margin: f64,
    pub weights: LossWeights,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            kind: MosLossKind::Gauss,
            tau: 0.25,
            margin: 0.1,
            weights: LossWeights::default(),
        }
    }
}

/// One batch item: a pooled embedding with its targets.
#[derive(Debug, Clone)]
pub struct LossItem {
    pub pooled: DVector<f64>,
    pub mos: f64,
    pub variant: Variant,
    pub stoi: Option<f64>,
    /// SNR regression target; used on noisy variants only.
    pub snr: Option<f64>,
    /// Noise class target; used on noisy variants only.
    pub noise_class: Option<usize>,
    /// Listener-dependent extra pass: `(embedding row, rating target)`.
    pub listener: Option<(usize, f64)>,
}

impl LossItem {
    pub fn plain(pooled: DVector<f64>, mos: f64, variant: Variant) -> LossItem {
        LossItem {
            pooled,
            mos,
            variant,
            stoi: None,
            snr: None,
            noise_class: None,
            listener: None,
        }
    }
}

/// Unweighted component means plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub mos: f64,
    pub contrastive: f64,
    pub stoi: f64,
    pub snr: f64,
    pub noise: f64,
}

/// Gradient tensors matching [`PredictorHead`].
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub mos_mean: Projection,
    pub mos_logvar: Projection,
    pub stoi: Projection,
    pub snr: Projection,
    pub noise_w: DMatrix<f64>,
    pub noise_b: DVector<f64>,
    pub listener_emb: Option<DMatrix<f64>>,
}

impl HeadGrads {
    pub fn zeros_like(head: &PredictorHead) -> HeadGrads {
        let zero_proj = || Projection {
            w: DVector::zeros(head.hidden_dim),
            b: 0.0,
        };
        HeadGrads {
            w1: DMatrix::zeros(head.hidden_dim, head.full_input_dim()),
            b1: DVector::zeros(head.hidden_dim),
            mos_mean: zero_proj(),
            mos_logvar: zero_proj(),
            stoi: zero_proj(),
            snr: zero_proj(),
            noise_w: DMatrix::zeros(head.n_noise_classes, head.hidden_dim),
            noise_b: DVector::zeros(head.n_noise_classes),
            listener_emb: head
                .listeners
                .as_ref()
                .map(|t: &ListenerTable| DMatrix::zeros(t.ids.len() + 1, t.emb_dim())),
        }
    }

    /// Gradient tensors aligned with [`PredictorHead::params`].
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
        if let Some(emb) = &self.listener_emb {
            groups.push(emb.as_slice());
        }
        groups
    }
}

/// Clipped log-cosh: zero inside the clip region `|pred - target| <= tau`,
/// `log(cosh(pred - target))` outside. Subgradient zero at the boundary.
pub fn loss_clipped_logcosh(pred: f64, target: f64, tau: f64) -> f64 {
    let diff = pred - target;
    if diff.abs() <= tau {
        0.0
    } else {
        log_cosh(diff)
    }
}

fn log_cosh(x: f64) -> f64 {
    // numerically stable for large |x|
    let a = x.abs();
    a + (1.0 + (-2.0 * a).exp()).ln() - std::f64::consts::LN_2
}

fn grad_clipped_logcosh(pred: f64, target: f64, tau: f64) -> f64 {
    let diff = pred - target;
    if diff.abs() <= tau {
        0.0
    } else {
        diff.tanh()
    }
}

/// Gaussian negative log-likelihood with the constant term dropped:
/// `0.5 * logvar + 0.5 * (target - mu)^2 * exp(-logvar)`.
pub fn loss_gauss(mu: f64, logvar: f64, target: f64) -> f64 {
    0.5 * logvar + 0.5 * (target - mu) * (target - mu) * (-logvar).exp()
}

/// Pairwise ranking hinge: mean over i < j of
/// `max(0, |(preds_i - preds_j) - (targets_i - targets_j)| - margin)`.
/// Fewer than two items contribute zero (with a warning).
pub fn loss_contrastive(preds: &[f64], targets: &[f64], margin: f64) -> f64 {
    let n = preds.len().min(targets.len());
    if n < 2 {
        log::warn!("contrastive loss needs >= 2 items, got {n}; contributing 0");
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (preds[i] - preds[j]) - (targets[i] - targets[j]);
            sum += (d.abs() - margin).max(0.0);
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// Max-subtracted softmax.
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let exp = logits.map(|v| (v - max).exp());
    let sum: f64 = exp.iter().sum();
    exp / sum
}

/// Cross entropy of a class label under the logits.
pub fn cross_entropy(logits: &DVector<f64>, class: usize) -> f64 {
    let max = logits.max();
    let log_sum: f64 = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    log_sum - logits[class]
}

struct ItemTraces {
    /// UNK pass (or the only pass without listener conditioning).
    primary: ForwardTrace,
    /// Listener-conditioned pass with its rating target.
    listener: Option<(ForwardTrace, f64)>,
}

fn run_forward(head: &PredictorHead, items: &[LossItem]) -> Result<Vec<ItemTraces>, NetError> {
    items
        .iter()
        .map(|item| {
            let primary = head.forward_trace(&item.pooled, None)?;
            let listener = match item.listener {
                Some((row, rating)) if head.listeners.is_some() => {
                    Some((head.forward_trace(&item.pooled, Some(row))?, rating))
                }
                _ => None,
            };
            Ok(ItemTraces { primary, listener })
        })
        .collect()
}

fn components(traces: &[ItemTraces], items: &[LossItem], params: &LossParams) -> LossBreakdown {
    let mos_of = |trace: &ForwardTrace, target: f64| match params.kind {
        MosLossKind::Gauss => loss_gauss(trace.outputs.mos_mean, trace.outputs.mos_logvar, target),
        MosLossKind::LogCosh => loss_clipped_logcosh(trace.outputs.mos_mean, target, params.tau),
    };

    let mut mos_sum = 0.0;
    for (trace, item) in traces.iter().zip(items) {
        let mut item_loss = mos_of(&trace.primary, item.mos);
        let mut passes = 1.0;
        if let Some((lt, rating)) = &trace.listener {
            item_loss += mos_of(lt, *rating);
            passes = 2.0;
        }
        mos_sum += item_loss / passes;
    }
    let mos = mos_sum / items.len() as f64;

    let preds: Vec<f64> = traces.iter().map(|t| t.primary.outputs.mos_mean).collect();
    let targets: Vec<f64> = items.iter().map(|i| i.mos).collect();
    let contrastive = loss_contrastive(&preds, &targets, params.margin);

    let mut stoi_sum = 0.0;
    let mut stoi_n = 0usize;
    let mut snr_sum = 0.0;
    let mut snr_n = 0usize;
    let mut noise_sum = 0.0;
    let mut noise_n = 0usize;
    for (trace, item) in traces.iter().zip(items) {
        if let Some(target) = item.stoi {
            stoi_sum += loss_clipped_logcosh(trace.primary.outputs.stoi, target, params.tau);
            stoi_n += 1;
        }
        if item.variant == Variant::Noisy {
            if let Some(target) = item.snr {
                snr_sum += loss_clipped_logcosh(trace.primary.outputs.snr, target, params.tau);
                snr_n += 1;
            }
            if let Some(class) = item.noise_class {
                noise_sum += cross_entropy(&trace.primary.outputs.noise_logits, class);
                noise_n += 1;
            }
        }
    }
    let stoi = if stoi_n > 0 {
        stoi_sum / stoi_n as f64
    } else {
        0.0
    };
    let snr = if snr_n > 0 {
        snr_sum / snr_n as f64
    } else {
        0.0
    };
    let noise = if noise_n > 0 {
        noise_sum / noise_n as f64
    } else {
        0.0
    };

    let w = &params.weights;
    LossBreakdown {
        total: w.mos * mos
            + w.contrast * contrastive
            + w.stoi * stoi
            + w.snr * snr
            + w.noise * noise,
        mos,
        contrastive,
        stoi,
        snr,
        noise,
    }
}

/// Forward-only batch loss (used by the finite-difference oracle).
pub fn loss_value(
    head: &PredictorHead,
    items: &[LossItem],
    params: &LossParams,
) -> Result<LossBreakdown, NetError> {
    assert!(!items.is_empty(), "loss over an empty batch");
    let traces = run_forward(head, items)?;
    Ok(components(&traces, items, params))
}

/// Batch loss plus exact parameter gradients by backpropagation.
pub fn loss_total(
    head: &PredictorHead,
    items: &[LossItem],
    params: &LossParams,
) -> Result<(LossBreakdown, HeadGrads), NetError> {
    assert!(!items.is_empty(), "loss over an empty batch");
    let traces = run_forward(head, items)?;
    let breakdown = components(&traces, items, params);
    let mut grads = HeadGrads::zeros_like(head);

    let n = items.len() as f64;
    let w = &params.weights;

    // d(component mean)/d(pred) for the contrastive term, per primary pass
    let mut contrast_dmu = vec![0.0; items.len()];
    if items.len() >= 2 && w.contrast > 0.0 {
        let pairs = (items.len() * (items.len() - 1) / 2) as f64;
        for i in 0..items.len() {
            for j in (i + 1)..items.len() {
                let d = (traces[i].primary.outputs.mos_mean - traces[j].primary.outputs.mos_mean)
                    - (items[i].mos - items[j].mos);
                if d.abs() > params.margin {
                    let s = d.signum() / pairs;
                    contrast_dmu[i] += s;
                    contrast_dmu[j] -= s;
                }
            }
        }
    }

    let stoi_n = items.iter().filter(|i| i.stoi.is_some()).count().max(1) as f64;
    let snr_n = items
        .iter()
        .filter(|i| i.variant == Variant::Noisy && i.snr.is_some())
        .count()
        .max(1) as f64;
    let noise_n = items
        .iter()
        .filter(|i| i.variant == Variant::Noisy && i.noise_class.is_some())
        .count()
        .max(1) as f64;

    let mos_grads = |trace: &ForwardTrace, target: f64, scale: f64| -> (f64, f64) {
        match params.kind {
            MosLossKind::Gauss => {
                let mu = trace.outputs.mos_mean;
                let lv = trace.outputs.mos_logvar;
                let inv_var = (-lv).exp();
                let dmu = (mu - target) * inv_var * scale;
                let dlv = (0.5 - 0.5 * (target - mu) * (target - mu) * inv_var) * scale;
                (dmu, dlv)
            }
            MosLossKind::LogCosh => (
                grad_clipped_logcosh(trace.outputs.mos_mean, target, params.tau) * scale,
                0.0,
            ),
        }
    };

    for (idx, (trace, item)) in traces.iter().zip(items).enumerate() {
        let passes = if trace.listener.is_some() { 2.0 } else { 1.0 };

        // primary pass output gradients
        let (mut dmu, dlv) = mos_grads(&trace.primary, item.mos, w.mos / (n * passes));
        dmu += w.contrast * contrast_dmu[idx];
        let dstoi = item
            .stoi
            .map(|t| {
                grad_clipped_logcosh(trace.primary.outputs.stoi, t, params.tau) * w.stoi / stoi_n
            })
            .unwrap_or(0.0);
        let (dsnr, dnoise) = if item.variant == Variant::Noisy {
            let dsnr = item
                .snr
                .map(|t| {
                    grad_clipped_logcosh(trace.primary.outputs.snr, t, params.tau) * w.snr / snr_n
                })
                .unwrap_or(0.0);
            let dnoise = item.noise_class.map(|class| {
                let mut d = softmax(&trace.primary.outputs.noise_logits);
                d[class] -= 1.0;
                d * (w.noise / noise_n)
            });
            (dsnr, dnoise)
        } else {
            (0.0, None)
        };
        backprop_pass(
            head,
            &trace.primary,
            dmu,
            dlv,
            dstoi,
            dsnr,
            dnoise.as_ref(),
            &mut grads,
        );

        // listener pass: MOS loss only
        if let Some((lt, rating)) = &trace.listener {
            let (dmu, dlv) = mos_grads(lt, *rating, w.mos / (n * passes));
            backprop_pass(head, lt, dmu, dlv, 0.0, 0.0, None, &mut grads);
        }
    }

    Ok((breakdown, grads))
}

/// Accumulates one pass's gradients given the output-level gradients.
#[allow(clippy::too_many_arguments)]
fn backprop_pass(
    head: &PredictorHead,
    trace: &ForwardTrace,
    dmu: f64,
    dlv: f64,
    dstoi: f64,
    dsnr: f64,
    dnoise: Option<&DVector<f64>>,
    grads: &mut HeadGrads,
) {
    let hidden = &trace.outputs.hidden;

    let mut dhidden = &head.mos_mean.w * dmu;
    if dlv != 0.0 {
        dhidden += &head.mos_logvar.w * dlv;
    }
    if dstoi != 0.0 {
        dhidden += &head.stoi.w * dstoi;
    }
    if dsnr != 0.0 {
        dhidden += &head.snr.w * dsnr;
    }
    if let Some(dn) = dnoise {
        dhidden += head.noise_w.tr_mul(dn);
    }

    grads.mos_mean.w.axpy(dmu, hidden, 1.0);
    grads.mos_mean.b += dmu;
    if dlv != 0.0 {
        grads.mos_logvar.w.axpy(dlv, hidden, 1.0);
        grads.mos_logvar.b += dlv;
    }
    if dstoi != 0.0 {
        grads.stoi.w.axpy(dstoi, hidden, 1.0);
        grads.stoi.b += dstoi;
    }
    if dsnr != 0.0 {
        grads.snr.w.axpy(dsnr, hidden, 1.0);
        grads.snr.b += dsnr;
    }
    if let Some(dn) = dnoise {
        grads.noise_w.ger(1.0, dn, hidden, 1.0);
        grads.noise_b += dn;
    }

    // through the ReLU (subgradient 0 at exactly 0)
    let dpre = DVector::from_fn(head.hidden_dim, |i, _| {
        if trace.preact[i] > 0.0 {
            dhidden[i]
        } else {
            0.0
        }
    });
    grads.w1.ger(1.0, &dpre, &trace.input, 1.0);
    grads.b1 += &dpre;

    if let (Some(emb_grads), Some(row)) = (&mut grads.listener_emb, trace.listener_row) {
        let input_dim = head.input_dim;
        let dinput = head.w1.tr_mul(&dpre);
        for e in 0..emb_grads.ncols() {
            emb_grads[(row, e)] += dinput[input_dim + e];
        }
    }
}
