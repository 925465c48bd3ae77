//! LAMB optimizer and the Noam warmup schedule.

/// Noam learning rate, normalized so the peak equals `base_lr` at
/// `step == warmup`:
///
/// ```text
/// base_lr * warmup^0.5 * min(step^-0.5, step * warmup^-1.5)
/// ```
pub fn noam_lr(step: u64, base_lr: f64, warmup: u64) -> f64 {
    assert!(step >= 1, "noam_lr steps are 1-based");
    let s = step as f64;
    let w = warmup as f64;
    base_lr * w.sqrt() * (s.powf(-0.5)).min(s * w.powf(-1.5))
}

/// LAMB hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for LambParams {
    fn default() -> Self {
        LambParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-6,
            weight_decay: 0.0,
        }
    }
}

/// Per-group first/second moments plus the step counter.
#[derive(Debug, Clone)]
pub struct LambState {
    pub step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl LambState {
    pub fn new(group_sizes: &[usize]) -> LambState {
        LambState {
            step: 0,
            moments: group_sizes
                .iter()
                .map(|&n| (vec![0.0; n], vec![0.0; n]))
                .collect(),
        }
    }
}

/// One LAMB update over parameter groups.
///
/// Per group: bias-corrected Adam moments give the update direction
/// `u = m_hat / (sqrt(v_hat) + eps) + weight_decay * w`; the trust ratio
/// `phi = ||w|| / ||u||` (1 when either norm is zero) is clipped to
/// [0, 10] and the group moves by `-lr * phi * u`.
pub fn lamb_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut LambState,
    lr: f64,
    hp: &LambParams,
) {
    assert_eq!(params.len(), grads.len(), "group count mismatch");
    assert_eq!(params.len(), state.moments.len(), "state group mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hp.beta1.powi(t);
    let bias2 = 1.0 - hp.beta2.powi(t);

    for ((group, grad), (m, v)) in params.iter_mut().zip(grads).zip(&mut state.moments) {
        assert_eq!(group.len(), grad.len(), "group size mismatch");
        let mut update = vec![0.0; group.len()];
        let mut w_norm_sq = 0.0;
        let mut u_norm_sq = 0.0;
        for i in 0..group.len() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grad[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            let u = m_hat / (v_hat.sqrt() + hp.epsilon) + hp.weight_decay * group[i];
            update[i] = u;
            w_norm_sq += group[i] * group[i];
            u_norm_sq += u * u;
        }
        let w_norm = w_norm_sq.sqrt();
        let u_norm = u_norm_sq.sqrt();
        let trust = if w_norm == 0.0 || u_norm == 0.0 {
            1.0
        } else {
            (w_norm / u_norm).clamp(0.0, 10.0)
        };
        for i in 0..group.len() {
            group[i] -= lr * trust * update[i];
        }
    }
}
