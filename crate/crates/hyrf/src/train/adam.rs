//! First-order optimizer with bias-corrected moment estimates, applied per
//! parameter group.

use crate::gaussians::Moments;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// One update over a flat parameter slice. `step` is 1-based and shared per
/// group so bias correction stays aligned across densification events.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    step: u64,
    hp: &AdamHyper,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), moments.m.len());
    if hp.lr == 0.0 {
        return;
    }
    let bc1 = 1.0 - hp.beta1.powi(step as i32);
    let bc2 = 1.0 - hp.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = hp.beta1 * moments.m[i] + (1.0 - hp.beta1) * g;
        let v = hp.beta2 * moments.v[i] + (1.0 - hp.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// Exponential interpolation between an initial and final learning rate over
/// `max_steps`, the usual position schedule.
pub fn lr_exp_decay(lr_init: f64, lr_final: f64, step: u64, max_steps: u64) -> f64 {
    if max_steps == 0 || lr_init <= 0.0 {
        return lr_init.max(0.0);
    }
    let ratio = lr_final / lr_init;
    if !(ratio.is_finite() && ratio > 0.0) {
        return lr_init;
    }
    let t = (step as f64 / max_steps as f64).clamp(0.0, 1.0);
    lr_init * ratio.powf(t)
}
