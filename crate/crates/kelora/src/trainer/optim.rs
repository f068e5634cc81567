//! AdamW and the cosine learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::trainer::TrainConfig;

/// Per-tensor Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamWState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One decoupled-weight-decay Adam step with bias correction:
///
/// ```text
/// m <- b1 m + (1 - b1) g        m_hat = m / (1 - b1^t)
/// v <- b2 v + (1 - b2) g^2      v_hat = v / (1 - b2^t)
/// p <- p - lr * ( m_hat / (sqrt(v_hat) + eps) + weight_decay * p )
/// ```
///
/// Betas, eps, and weight decay come from `cfg`; use
/// [`TrainConfig::without_weight_decay`] for tensors that should not decay.
pub fn adamw_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamWState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            op: "adamw_step",
            left: param.len(),
            right: if param.len() != grad.len() {
                grad.len()
            } else {
                state.m.len()
            },
        });
    }
    if lr < 0.0 || lr.is_nan() {
        return Err(Error::InvalidArgument {
            what: "learning rate",
            details: alloc::format!("must be nonnegative, got {lr}"),
        });
    }
    let (beta1, beta2) = cfg.betas;
    state.t += 1;
    let bc1 = 1.0 - fmath::powi(beta1, state.t);
    let bc2 = 1.0 - fmath::powi(beta2, state.t);
    for ((p, &g), (m, v)) in param
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (fmath::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * *p);
    }
    Ok(())
}

/// Cosine decay from `base_lr` at step 0 to 0 at `total`; steps past `total`
/// clamp to the final value. `total` must be at least 1.
pub fn cosine_lr(step: usize, total: usize, base_lr: f64) -> f64 {
    assert!(total >= 1, "cosine_lr needs total >= 1");
    let s = step.min(total);
    base_lr * 0.5 * (1.0 + fmath::cos(core::f64::consts::PI * s as f64 / total as f64))
}
