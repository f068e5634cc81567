//! A small frozen-backbone classifier driven entirely by adapters.

use alloc::vec;
use alloc::vec::Vec;

use crate::adapter::{KernelizedAdapter, MemoryMeter, MergeMode};
use crate::error::{Error, Result};
use crate::fmath;
use crate::kernels::KernelSpec;
use crate::numkit::{randn, Matrix, RngStream};
use crate::trainer::{
    adamw_step, cosine_lr, softmax_cross_entropy, AdamWState, Dataset, TrainConfig,
};

/// Trainable dense classifier head: `logits = h W^T + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    /// classes x hidden.
    pub w: Matrix,
    pub bias: Vec<f64>,
}

/// One metric row per epoch (possibly a partial final epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    /// Global step count at the end of the epoch.
    pub step: usize,
    /// Learning rate applied at the epoch's last step.
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Training accuracy over the epoch (computed from pre-update logits).
    pub accuracy: f64,
}

/// Stack of adapted linear layers with ReLU between them and a dense head.
///
/// Base weights are frozen at construction; training moves only the adapter
/// factors, kernel parameters, and the head.
#[derive(Debug, Clone)]
pub struct TinyModel {
    layers: Vec<KernelizedAdapter>,
    head: DenseHead,
}

impl TinyModel {
    /// Builds a model with layer widths `dims` (input first), a `classes`-way
    /// head, and one adapter per layer. Base weights draw from
    /// Gaussian(0, 2/fan_in); the head starts at zero so the initial loss is
    /// exactly `ln(classes)`.
    pub fn new(
        dims: &[usize],
        classes: usize,
        rank: usize,
        kernel: &KernelSpec,
        sparsity: f64,
        mode: MergeMode,
        seed: u64,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument {
                what: "model dims",
                details: alloc::format!("need input and at least one layer, got {:?}", dims),
            });
        }
        if classes < 2 {
            return Err(Error::InvalidArgument {
                what: "model classes",
                details: alloc::format!("need at least 2, got {classes}"),
            });
        }
        let mut rng = RngStream::new(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w0 = randn(&mut rng, fan_out, fan_in, fmath::sqrt(2.0 / fan_in as f64));
            layers.push(KernelizedAdapter::new(
                w0,
                rank,
                kernel.clone(),
                sparsity,
                mode,
                &mut rng,
            )?);
        }
        let hidden = *dims.last().expect("checked above");
        Ok(Self {
            layers,
            head: DenseHead {
                w: Matrix::zeros(classes, hidden),
                bias: vec![0.0; classes],
            },
        })
    }

    /// Builds a model from explicit parts (checkpoint restore). Layer output
    /// widths must chain, and the head must match the last layer.
    pub fn from_parts(layers: Vec<KernelizedAdapter>, head: DenseHead) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument {
                what: "model layers",
                details: "need at least one layer".into(),
            });
        }
        for pair in layers.windows(2) {
            if pair[1].w0().cols() != pair[0].w0().rows() {
                return Err(Error::ShapeMismatch {
                    op: "model layer chain",
                    lhs: pair[0].w0().shape(),
                    rhs: pair[1].w0().shape(),
                });
            }
        }
        let hidden = layers.last().expect("nonempty").w0().rows();
        if head.w.cols() != hidden || head.bias.len() != head.w.rows() {
            return Err(Error::ShapeMismatch {
                op: "model head",
                lhs: head.w.shape(),
                rhs: (head.bias.len(), hidden),
            });
        }
        Ok(Self { layers, head })
    }

    pub fn layers(&self) -> &[KernelizedAdapter] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [KernelizedAdapter] {
        &mut self.layers
    }

    pub fn head(&self) -> &DenseHead {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w0().cols()
    }

    pub fn class_count(&self) -> usize {
        self.head.w.rows()
    }

    /// Combined content hash of every frozen base matrix; training must not
    /// change it.
    pub fn frozen_weights_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for layer in &self.layers {
            for byte in layer.w0().content_hash().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Logits for a batch, without retaining backward state.
    pub fn infer(&mut self, x: &Matrix, meter: &mut MemoryMeter) -> Result<Matrix> {
        let (acts, _) = self.forward_cached(x, meter)?;
        for layer in &mut self.layers {
            layer.discard_forward_state(meter);
        }
        self.head_logits(acts.last().expect("nonempty"))
    }

    fn head_logits(&self, hidden: &Matrix) -> Result<Matrix> {
        let mut logits = hidden.matmul_transpose(&self.head.w)?;
        for row in 0..logits.rows() {
            for (value, &b) in logits.row_mut(row).iter_mut().zip(&self.head.bias) {
                *value += b;
            }
        }
        Ok(logits)
    }

    /// Runs every layer, returning the post-activation inputs of each layer
    /// (`result[l]` feeds layer `l`; the last entry feeds the head) and the
    /// pre-activation outputs.
    fn forward_cached(
        &mut self,
        x: &Matrix,
        meter: &mut MemoryMeter,
    ) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        inputs.push(x.clone());
        for layer in &mut self.layers {
            let z = layer.forward(inputs.last().expect("nonempty"), meter)?;
            let mut activated = z.clone();
            for v in activated.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            pre_acts.push(z);
            inputs.push(activated);
        }
        Ok((inputs, pre_acts))
    }
}

/// Trains adapters and head with AdamW under cosine decay; base weights
/// never move. Weight decay applies to the adapter factors and the head
/// weight matrix; kernel parameters and the head bias are excluded so their
/// zero initializations stay reachable. Returns one record per epoch.
///
/// Within an epoch the sample order is a seeded shuffle (`cfg.seed`), split
/// into `ceil(N / batch_size)` batches; training stops mid-epoch when
/// `cfg.total_steps` is reached. The meter observes every adapter buffer of
/// the run. A non-finite batch loss (divergence, NaN/inf inputs) aborts
/// with an error instead of training on garbage.
pub fn train_classifier(
    model: &mut TinyModel,
    data: &Dataset,
    cfg: &TrainConfig,
    meter: &mut MemoryMeter,
) -> Result<Vec<MetricRecord>> {
    cfg.validate()?;
    if data.feature_dim() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "train_classifier features",
            lhs: (data.len(), data.feature_dim()),
            rhs: (data.len(), model.input_dim()),
        });
    }
    if data.class_count > model.class_count() {
        return Err(Error::InvalidArgument {
            what: "train_classifier classes",
            details: alloc::format!(
                "dataset has {} classes but the head only {}",
                data.class_count,
                model.class_count()
            ),
        });
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument {
            what: "train_classifier dataset",
            details: "dataset is empty".into(),
        });
    }

    let no_decay = cfg.without_weight_decay();
    let mut layer_states: Vec<(AdamWState, AdamWState, AdamWState)> = model
        .layers()
        .iter()
        .map(|l| {
            (
                AdamWState::new(l.a().data().len()),
                AdamWState::new(l.b().data().len()),
                AdamWState::new(l.kernel().param_count()),
            )
        })
        .collect();
    let mut head_w_state = AdamWState::new(model.head.w.data().len());
    let mut head_b_state = AdamWState::new(model.head.bias.len());

    let mut shuffle_rng = RngStream::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::new();
    let mut step = 0usize;

    while step < cfg.total_steps {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        let mut epoch_correct = 0usize;
        let mut epoch_seen = 0usize;
        let mut last_lr = 0.0;

        for chunk in order.chunks(cfg.batch_size) {
            if step >= cfg.total_steps {
                break;
            }
            let batch_x = Matrix::from_fn(chunk.len(), data.feature_dim(), |bi, j| {
                data.features[(chunk[bi], j)]
            });
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();

            let (inputs, pre_acts) = model.forward_cached(&batch_x, meter)?;
            let logits = model.head_logits(inputs.last().expect("nonempty"))?;
            let (loss, d_logits) = softmax_cross_entropy(&logits, &batch_labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { op: "training loss" });
            }
            epoch_loss += loss;
            epoch_batches += 1;
            for (row, &label) in batch_labels.iter().enumerate() {
                if argmax(logits.row(row)) == label {
                    epoch_correct += 1;
                }
            }
            epoch_seen += chunk.len();

            let lr = cosine_lr(step, cfg.total_steps, cfg.base_lr);
            last_lr = lr;

            // head gradients and update
            let d_head_w = d_logits.transpose_matmul(inputs.last().expect("nonempty"))?;
            let mut d_bias = vec![0.0; model.head.bias.len()];
            for row in 0..d_logits.rows() {
                for (acc, &g) in d_bias.iter_mut().zip(d_logits.row(row)) {
                    *acc += g;
                }
            }
            let mut d_hidden = d_logits.matmul(&model.head.w)?;
            adamw_step(
                model.head.w.data_mut(),
                d_head_w.data(),
                &mut head_w_state,
                lr,
                cfg,
            )?;
            adamw_step(
                &mut model.head.bias,
                &d_bias,
                &mut head_b_state,
                lr,
                &no_decay,
            )?;

            // adapters, last layer first
            for (idx, layer) in model.layers.iter_mut().enumerate().rev() {
                // gate the upstream gradient through the ReLU
                let mut d_z = d_hidden;
                for (g, &z) in d_z.data_mut().iter_mut().zip(pre_acts[idx].data()) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
                let grads = layer.backward(&inputs[idx], &d_z, meter)?;
                let (st_a, st_b, st_k) = &mut layer_states[idx];
                adamw_step(layer.a_data_mut(), grads.d_a.data(), st_a, lr, cfg)?;
                adamw_step(layer.b_data_mut(), grads.d_b.data(), st_b, lr, cfg)?;
                if !grads.d_kernel.is_empty() {
                    let mut params = layer.kernel_params();
                    adamw_step(&mut params, &grads.d_kernel, st_k, lr, &no_decay)?;
                    layer.set_kernel_params(&params)?;
                }
                d_hidden = grads.d_x;
            }

            step += 1;
        }

        records.push(MetricRecord {
            step,
            lr: last_lr,
            loss: epoch_loss / epoch_batches as f64,
            accuracy: epoch_correct as f64 / epoch_seen as f64,
        });
    }
    Ok(records)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
