//! Kernelized low-rank adapters with competition-based sparsification.
//!
//! A frozen weight matrix `W0` is adapted by a low-rank pair `(B, A)` whose
//! update is produced entrywise by a kernel: `dW[i][j] = k(B[i], A[j])`.
//! With the linear kernel this is exactly `B * A^T`; the nonlinear kernels
//! lift the update out of the rank-r manifold at the same parameter cost.
//! The update is then sparsified by magnitude competition (the smallest
//! entries are zeroed, survivors are soft-thresholded) and merged as
//! `W0 + dWs`, so inference pays nothing over the dense baseline.
//!
//! The crate is `no_std`-compatible (`alloc` required); disable the default
//! `std` feature to build without the standard library. Everything is
//! deterministic: a seeded [`numkit::RngStream`] drives all randomness, and
//! repeated runs with the same seed produce bitwise-identical results.
//!
//! Layout:
//! * [`numkit`]: dense row-major matrices, the seeded generator, rank-k
//!   selection, and singular values via one-sided Jacobi.
//! * [`kernels`]: the kernel family and its analytic gradients.
//! * [`adapter`]: merge, sparsify, forward/backward in store or recompute
//!   mode, and merged export, with explicit buffer accounting.
//! * [`trainer`]: AdamW, cosine schedule, matrix fitting, and a small
//!   classifier for end-to-end runs.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod adapter;
pub mod error;
mod fmath;
pub mod kernels;
pub mod numkit;
pub mod trainer;

pub use adapter::{KernelizedAdapter, MemoryMeter, MergeMode, SparsifyResult, ThresholdForm};
pub use error::{Error, Result};
pub use kernels::KernelSpec;
pub use numkit::{Matrix, RngStream};
