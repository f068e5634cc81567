//! Optimization and experiment drivers: AdamW with cosine decay, the
//! matrix-fitting study, and a small adapted classifier for end-to-end runs.

mod data;
mod fit;
mod loss;
mod model;
mod optim;

pub use data::{make_blobs, Dataset};
pub use fit::{fit_matrix, FitResult};
pub use loss::softmax_cross_entropy;
pub use model::{train_classifier, DenseHead, MetricRecord, TinyModel};
pub use optim::{adamw_step, cosine_lr, AdamWState};

use crate::error::{Error, Result};

/// Hyperparameters shared by the training loops.
///
/// Defaults: `base_lr` 1e-3, `weight_decay` 1e-4, `batch_size` 32,
/// `total_steps` 1000, `betas` (0.9, 0.999), `eps` 1e-8, `seed` 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            total_steps: 1000,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidArgument {
                what: "base_lr",
                details: alloc::format!("must be positive and finite, got {}", self.base_lr),
            });
        }
        for (name, beta) in [("beta1", self.betas.0), ("beta2", self.betas.1)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidArgument {
                    what: "betas",
                    details: alloc::format!("{name} must lie in [0, 1), got {beta}"),
                });
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument {
                what: "batch_size",
                details: "must be at least 1".into(),
            });
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument {
                what: "eps",
                details: alloc::format!("must be positive and finite, got {}", self.eps),
            });
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument {
                what: "weight_decay",
                details: alloc::format!("must be nonnegative and finite, got {}", self.weight_decay),
            });
        }
        Ok(())
    }

    /// Copy with weight decay removed, for parameters that must be free to
    /// leave zero (kernel scales, biases).
    pub fn without_weight_decay(&self) -> TrainConfig {
        TrainConfig {
            weight_decay: 0.0,
            ..self.clone()
        }
    }
}
