//! Kernel functions pairing adapter factor rows, with analytic gradients.
//!
//! Each kernel maps two length-r vectors to a scalar. The linear kernel has
//! no parameters; the others carry a small set of learnable scalars. Scale
//! parameters initialize to zero so a fresh adapter contributes nothing,
//! mirroring the zero-product initialization of plain low-rank adapters.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::numkit::{dot, RngStream};

/// Kernel variant plus its learnable parameters.
///
/// Parameter layout (the order used by [`KernelSpec::params`],
/// [`KernelSpec::set_params`], and [`KernelGrad::d_params`]):
/// * `Linear`: none
/// * `PiecewiseLinear`: `[alpha_0, ..., alpha_{P-1}]`
/// * `Sigmoid`, `Rbf`: `[alpha, beta, gamma]`
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `x . x'`
    Linear,
    /// `sum_p alpha_p * ||x[seg_p] - x'[seg_p]||_2` over P contiguous
    /// near-equal segments `seg_p = [floor(r*p/P), floor(r*(p+1)/P))`.
    PiecewiseLinear { alpha: Vec<f64> },
    /// `alpha / (1 + exp(-beta * x.x')) + gamma`
    Sigmoid { alpha: f64, beta: f64, gamma: f64 },
    /// `alpha * exp(-beta * ||x - x'||_2^2) + gamma`
    Rbf { alpha: f64, beta: f64, gamma: f64 },
}

/// Segment count used by [`KernelSpec::piecewise_linear`] when no explicit
/// count is configured.
pub const DEFAULT_SEGMENTS: usize = 2;

impl KernelSpec {
    /// Piecewise-linear kernel with `segments` zero-initialized scales.
    pub fn piecewise_linear(segments: usize) -> Self {
        assert!(segments > 0, "segment count must be positive");
        KernelSpec::PiecewiseLinear {
            alpha: vec![0.0; segments],
        }
    }

    /// Sigmoid kernel at the zero-output initialization (`alpha = gamma = 0`,
    /// `beta = 1`).
    pub fn sigmoid() -> Self {
        KernelSpec::Sigmoid {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
        }
    }

    /// RBF kernel at the zero-output initialization.
    pub fn rbf() -> Self {
        KernelSpec::Rbf {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::PiecewiseLinear { .. } => "piecewise-linear",
            KernelSpec::Sigmoid { .. } => "sigmoid",
            KernelSpec::Rbf { .. } => "rbf",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            KernelSpec::Linear => 0,
            KernelSpec::PiecewiseLinear { alpha } => alpha.len(),
            KernelSpec::Sigmoid { .. } | KernelSpec::Rbf { .. } => 3,
        }
    }

    /// Learnable parameters in layout order.
    pub fn params(&self) -> Vec<f64> {
        match self {
            KernelSpec::Linear => Vec::new(),
            KernelSpec::PiecewiseLinear { alpha } => alpha.clone(),
            KernelSpec::Sigmoid { alpha, beta, gamma }
            | KernelSpec::Rbf { alpha, beta, gamma } => vec![*alpha, *beta, *gamma],
        }
    }

    /// Writes parameters back in layout order.
    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                op: "KernelSpec::set_params",
                left: self.param_count(),
                right: values.len(),
            });
        }
        match self {
            KernelSpec::Linear => {}
            KernelSpec::PiecewiseLinear { alpha } => alpha.copy_from_slice(values),
            KernelSpec::Sigmoid { alpha, beta, gamma }
            | KernelSpec::Rbf { alpha, beta, gamma } => {
                *alpha = values[0];
                *beta = values[1];
                *gamma = values[2];
            }
        }
        Ok(())
    }

    /// Replaces every scale parameter with a random nonzero value:
    /// magnitudes uniform in `[0.5, 1.5)`, signed for `alpha`/`gamma`,
    /// positive for `beta`. Used by rank studies, where a zero-initialized
    /// kernel would merge to the zero matrix.
    pub fn randomize_scales(&mut self, rng: &mut RngStream) {
        let signed = |rng: &mut RngStream| {
            let mag = 0.5 + rng.next_f64();
            if rng.next_u64() & 1 == 0 {
                mag
            } else {
                -mag
            }
        };
        match self {
            KernelSpec::Linear => {}
            KernelSpec::PiecewiseLinear { alpha } => {
                for a in alpha.iter_mut() {
                    *a = signed(rng);
                }
            }
            KernelSpec::Sigmoid { alpha, beta, gamma }
            | KernelSpec::Rbf { alpha, beta, gamma } => {
                *alpha = signed(rng);
                *beta = 0.5 + rng.next_f64();
                *gamma = signed(rng);
            }
        }
    }

    fn check_inputs(&self, x: &[f64], xp: &[f64]) -> Result<()> {
        if x.len() != xp.len() {
            return Err(Error::LengthMismatch {
                op: "kernel inputs",
                left: x.len(),
                right: xp.len(),
            });
        }
        if let KernelSpec::PiecewiseLinear { alpha } = self {
            if x.len() < alpha.len() {
                return Err(Error::InvalidArgument {
                    what: "piecewise-linear segments",
                    details: alloc::format!(
                        "{} segments need dimension >= {}, got {}",
                        alpha.len(),
                        alpha.len(),
                        x.len()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Half-open bounds of segment `p` when `[0, r)` is split into `total`
/// near-equal contiguous chunks.
#[inline]
fn segment_bounds(r: usize, total: usize, p: usize) -> (usize, usize) {
    (r * p / total, r * (p + 1) / total)
}

/// Gradient carrier for one kernel evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrad {
    pub d_x: Vec<f64>,
    pub d_xprime: Vec<f64>,
    /// Matches the parameter layout documented on [`KernelSpec`].
    pub d_params: Vec<f64>,
}

impl KernelGrad {
    pub fn zeros(dim: usize, param_count: usize) -> Self {
        Self {
            d_x: vec![0.0; dim],
            d_xprime: vec![0.0; dim],
            d_params: vec![0.0; param_count],
        }
    }

    fn reset(&mut self, dim: usize, param_count: usize) {
        self.d_x.clear();
        self.d_x.resize(dim, 0.0);
        self.d_xprime.clear();
        self.d_xprime.resize(dim, 0.0);
        self.d_params.clear();
        self.d_params.resize(param_count, 0.0);
    }
}

/// Evaluates the kernel at `(x, xp)`.
pub fn kernel_value(spec: &KernelSpec, x: &[f64], xp: &[f64]) -> Result<f64> {
    spec.check_inputs(x, xp)?;
    Ok(value_unchecked(spec, x, xp))
}

fn value_unchecked(spec: &KernelSpec, x: &[f64], xp: &[f64]) -> f64 {
    match spec {
        KernelSpec::Linear => dot(x, xp),
        KernelSpec::PiecewiseLinear { alpha } => {
            let total = alpha.len();
            let mut acc = 0.0;
            for (p, &a) in alpha.iter().enumerate() {
                let (lo, hi) = segment_bounds(x.len(), total, p);
                acc += a * segment_distance(&x[lo..hi], &xp[lo..hi]);
            }
            acc
        }
        KernelSpec::Sigmoid { alpha, beta, gamma } => {
            alpha * logistic(beta * dot(x, xp)) + gamma
        }
        KernelSpec::Rbf { alpha, beta, gamma } => {
            alpha * fmath::exp(-beta * squared_distance(x, xp)) + gamma
        }
    }
}

/// Evaluates the kernel and its gradients in one pass, reusing shared
/// subexpressions. `out` is resized to fit; no allocation happens when it
/// already has the right shape. The zero subgradient is used wherever a
/// segment distance vanishes.
pub fn kernel_value_grad_into(
    spec: &KernelSpec,
    x: &[f64],
    xp: &[f64],
    out: &mut KernelGrad,
) -> Result<f64> {
    spec.check_inputs(x, xp)?;
    let r = x.len();
    out.reset(r, spec.param_count());
    let value = match spec {
        KernelSpec::Linear => {
            out.d_x.copy_from_slice(xp);
            out.d_xprime.copy_from_slice(x);
            dot(x, xp)
        }
        KernelSpec::PiecewiseLinear { alpha } => {
            let total = alpha.len();
            let mut acc = 0.0;
            for (p, &a) in alpha.iter().enumerate() {
                let (lo, hi) = segment_bounds(r, total, p);
                let norm = segment_distance(&x[lo..hi], &xp[lo..hi]);
                out.d_params[p] = norm;
                acc += a * norm;
                if norm > 0.0 {
                    let scale = a / norm;
                    for i in lo..hi {
                        let diff = x[i] - xp[i];
                        out.d_x[i] = scale * diff;
                        out.d_xprime[i] = -scale * diff;
                    }
                }
            }
            acc
        }
        KernelSpec::Sigmoid { alpha, beta, gamma } => {
            let u = dot(x, xp);
            let sig = logistic(beta * u);
            let bell = sig * (1.0 - sig);
            let coeff = alpha * beta * bell;
            for i in 0..r {
                out.d_x[i] = coeff * xp[i];
                out.d_xprime[i] = coeff * x[i];
            }
            out.d_params[0] = sig;
            out.d_params[1] = alpha * bell * u;
            out.d_params[2] = 1.0;
            alpha * sig + gamma
        }
        KernelSpec::Rbf { alpha, beta, gamma } => {
            let d2 = squared_distance(x, xp);
            let e = fmath::exp(-beta * d2);
            let coeff = -2.0 * alpha * beta * e;
            for i in 0..r {
                let diff = x[i] - xp[i];
                out.d_x[i] = coeff * diff;
                out.d_xprime[i] = -coeff * diff;
            }
            out.d_params[0] = e;
            out.d_params[1] = -alpha * d2 * e;
            out.d_params[2] = 1.0;
            alpha * e + gamma
        }
    };
    Ok(value)
}

/// Allocating convenience wrapper around [`kernel_value_grad_into`].
pub fn kernel_grad(spec: &KernelSpec, x: &[f64], xp: &[f64]) -> Result<KernelGrad> {
    let mut out = KernelGrad::zeros(x.len(), spec.param_count());
    kernel_value_grad_into(spec, x, xp, &mut out)?;
    Ok(out)
}

#[inline]
fn logistic(u: f64) -> f64 {
    // exp may overflow to +inf for very negative u; 1/(1+inf) = 0 is the
    // correct limit, so no clamping needed
    1.0 / (1.0 + fmath::exp(-u))
}

#[inline]
fn squared_distance(x: &[f64], xp: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(xp) {
        let d = a - b;
        acc += d * d;
    }
    acc
}

#[inline]
fn segment_distance(x: &[f64], xp: &[f64]) -> f64 {
    fmath::sqrt(squared_distance(x, xp))
}
