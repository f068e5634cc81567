//! Seeded pseudo-random stream.

use alloc::vec::Vec;

use crate::fmath;
use crate::numkit::Matrix;

/// SplitMix64 stream.
///
/// The generator is fixed and documented so other implementations can match
/// it exactly: state advances by the 64-bit constant `0x9E3779B97F4A7C15`
/// per draw, and the output is the advanced state mixed by
///
/// ```text
/// z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
/// z ^= z >> 27; z *= 0x94D049BB133111EB;
/// z ^= z >> 31;
/// ```
///
/// The seed is the initial state, used as-is. Derived draws are defined on
/// top of `next_u64`:
/// * `next_f64`: `(z >> 11) as f64 * 2^-53`, uniform on `[0, 1)`.
/// * `next_bounded(n)`: Lemire multiply-shift, `(z * n) >> 64` in 128-bit
///   arithmetic. Slightly biased for huge `n`; fine for index shuffling.
/// * `next_gaussian`: Box-Muller, cosine branch only. Consumes exactly two
///   `next_u64` draws and discards the sine mate, trading half the entropy
///   for a stateless stream position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn next_bounded(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_bounded requires n > 0");
        (((self.next_u64() as u128) * (n as u128)) >> 64) as u64
    }

    /// Standard normal draw via Box-Muller (cosine branch).
    pub fn next_gaussian(&mut self) -> f64 {
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = fmath::sqrt(-2.0 * fmath::ln(u1));
        radius * fmath::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Fisher-Yates shuffle, one bounded draw per swap.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_bounded(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Matrix of i.i.d. Gaussian(0, std²) entries, filled row-major.
///
/// `std = 0` returns exact zeros without consuming the stream.
pub fn randn(rng: &mut RngStream, rows: usize, cols: usize, std: f64) -> Matrix {
    assert!(std >= 0.0, "randn requires std >= 0");
    if std == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(std * rng.next_gaussian());
    }
    Matrix::new(rows, cols, data).expect("length matches by construction")
}
