//! Classification loss.

use crate::error::{Error, Result};
use crate::fmath;
use crate::numkit::Matrix;

/// Mean softmax cross-entropy over a batch, with the gradient w.r.t. the
/// logits.
///
/// Rows are stabilized by their maximum before exponentiation. The gradient
/// is `(softmax - onehot) / batch`, so feeding it straight into a backward
/// pass differentiates the mean loss.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (batch, classes) = logits.shape();
    if labels.len() != batch {
        return Err(Error::LengthMismatch {
            op: "softmax_cross_entropy",
            left: batch,
            right: labels.len(),
        });
    }
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::InvalidArgument {
                what: "class label",
                details: alloc::format!(
                    "row {row} has label {label}, but there are only {classes} classes"
                ),
            });
        }
    }

    let mut d_logits = Matrix::zeros(batch, classes);
    let mut loss = 0.0;
    let inv_batch = 1.0 / batch as f64;
    for (row, &label) in labels.iter().enumerate() {
        let logit_row = logits.row(row);
        let max = logit_row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut denom = 0.0;
        for &l in logit_row {
            denom += fmath::exp(l - max);
        }
        loss += max + fmath::ln(denom) - logit_row[label];
        let grad_row = d_logits.row_mut(row);
        for (g, &l) in grad_row.iter_mut().zip(logit_row) {
            *g = fmath::exp(l - max) / denom * inv_batch;
        }
        grad_row[label] -= inv_batch;
    }
    Ok((loss * inv_batch, d_logits))
}
