//! Labeled datasets and synthetic blob generation.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::numkit::{Matrix, RngStream};

/// Feature matrix plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    /// Validates label count and range.
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::LengthMismatch {
                op: "Dataset::new",
                left: features.rows(),
                right: labels.len(),
            });
        }
        if class_count == 0 {
            return Err(Error::InvalidArgument {
                what: "class_count",
                details: "must be at least 1".into(),
            });
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= class_count {
                return Err(Error::InvalidArgument {
                    what: "dataset label",
                    details: alloc::format!(
                        "row {row} has label {label}, outside [0, {class_count})"
                    ),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Center of class `k`: one nonzero coordinate at axis `k % d`.
///
/// The amplitude is `separation / sqrt(2)` so that two distinct axes sit
/// exactly `separation` apart; when classes outnumber dimensions the axis is
/// reused with a grown amplitude, keeping all pairwise center distances at
/// least `separation / sqrt(2)`.
fn blob_center(k: usize, d: usize, separation: f64) -> (usize, f64) {
    let axis = k % d;
    let tier = (k / d) as f64;
    (axis, separation / fmath::sqrt(2.0) * (1.0 + tier))
}

/// Gaussian clusters with unit within-class variance and balanced labels
/// (`label[i] = i % classes`). Features are drawn row-major, one Gaussian
/// per coordinate, on top of the class center.
pub fn make_blobs(
    seed: u64,
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument {
            what: "make_blobs classes",
            details: alloc::format!("need at least 2, got {classes}"),
        });
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument {
            what: "make_blobs shape",
            details: alloc::format!("n and d must be positive, got n={n}, d={d}"),
        });
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "make_blobs separation",
            details: alloc::format!("must be nonnegative and finite, got {separation}"),
        });
    }
    let mut rng = RngStream::new(seed);
    let mut labels = Vec::with_capacity(n);
    let mut features = Matrix::zeros(n, d);
    for i in 0..n {
        let label = i % classes;
        labels.push(label);
        let (axis, amplitude) = blob_center(label, d, separation);
        let row = features.row_mut(i);
        for (j, value) in row.iter_mut().enumerate() {
            let center = if j == axis { amplitude } else { 0.0 };
            *value = center + rng.next_gaussian();
        }
    }
    Dataset::new(features, labels, classes)
}
