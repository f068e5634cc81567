//! Numerical primitives: matrices, seeded randomness, selection, and
//! singular values. Everything here is deterministic given identical inputs,
//! accumulates in fixed loop order, and never touches global state.

mod matrix;
mod rng;
mod select;
mod svd;

pub(crate) use matrix::dot;
pub use matrix::Matrix;
pub use rng::{randn, RngStream};
pub use select::kth_smallest_abs;
pub use svd::{numeric_rank, singular_values, DEFAULT_RANK_REL_TOL};
