//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Everything that can go wrong in this crate.
///
/// Numerical routines return errors for contract violations (shape
/// mismatches, out-of-range arguments, non-finite inputs) rather than
/// panicking, so callers can surface them as ordinary failures.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands had incompatible dimensions.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// Two slices that must be equal length were not.
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    /// A selection rank `k` was outside `1..=len`.
    RankOutOfRange { k: usize, len: usize },
    /// An input contained NaN or infinity.
    NonFinite { op: &'static str },
    /// A scalar or structural argument violated its documented range.
    InvalidArgument {
        what: &'static str,
        details: String,
    },
    /// `backward` was called without a matching `forward`.
    MissingForwardState,
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => write!(
                f,
                "{op}: shape mismatch, lhs is {}x{} but rhs is {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Error::LengthMismatch { op, left, right } => {
                write!(f, "{op}: length mismatch, {left} vs {right}")
            }
            Error::RankOutOfRange { k, len } => {
                write!(f, "selection rank {k} out of range for length {len}")
            }
            Error::NonFinite { op } => write!(f, "{op}: input contains NaN or infinity"),
            Error::InvalidArgument { what, details } => write!(f, "{what}: {details}"),
            Error::MissingForwardState => {
                write!(f, "backward called without a matching forward pass")
            }
        }
    }
}

impl core::error::Error for Error {}
