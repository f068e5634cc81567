//! Dense row-major f64 matrix.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::fmath;

/// Dense matrix, row-major, at least 1x1.
///
/// Entry `(i, j)` lives at `data[i * cols + j]`. All reductions run in fixed
/// row-major order so results are reproducible bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Wraps an existing row-major buffer.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument {
                what: "matrix shape",
                details: alloc::format!("dimensions must be positive, got {rows}x{cols}"),
            });
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                op: "Matrix::new",
                left: rows * cols,
                right: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix by evaluating `f(i, j)` over all entries in row-major
    /// order.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * rhs`. Requires `self.cols == rhs.rows`.
    ///
    /// Each output entry is a dot product accumulated over ascending `k`, so
    /// the result is independent of the blocking used here.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        // i-k-j order: walks rhs by rows, still sums each entry over
        // ascending k exactly like the naive triple loop
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &l) in lhs_row.iter().enumerate() {
                let rhs_row = rhs.row(k);
                for (o, &r) in out_row.iter_mut().zip(rhs_row) {
                    *o += l * r;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T` without materializing the transpose. Requires
    /// `self.cols == rhs.cols`.
    pub fn matmul_transpose(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_transpose",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out[(i, j)] = dot(a, rhs.row(j));
            }
        }
        Ok(out)
    }

    /// `self^T * rhs` without materializing the transpose. Requires
    /// `self.rows == rhs.rows`. Entry `(i, j)` sums over ascending rows.
    pub fn transpose_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "transpose_matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for b in 0..self.rows {
            let lhs_row = self.row(b);
            let rhs_row = rhs.row(b);
            for (i, &l) in lhs_row.iter().enumerate() {
                let out_row = out.row_mut(i);
                for (o, &r) in out_row.iter_mut().zip(rhs_row) {
                    *o += l * r;
                }
            }
        }
        Ok(out)
    }

    /// Entrywise sum.
    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    /// Entrywise difference.
    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute entrywise difference. Errors on shape mismatch.
    pub fn max_abs_diff(&self, rhs: &Matrix) -> Result<f64> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .fold(0.0, |acc: f64, (&a, &b)| acc.max((a - b).abs())))
    }

    /// Frobenius norm, accumulated in row-major order.
    pub fn frob_norm(&self) -> f64 {
        fmath::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    /// FNV-1a over the little-endian bytes of every entry, row-major.
    ///
    /// Bitwise content fingerprint; distinguishes `0.0` from `-0.0` and is
    /// stable across platforms of equal endianness handling (the bytes are
    /// explicitly little-endian).
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product over ascending index.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Matrix::new(0, 3, alloc::vec![]).is_err());
        assert!(Matrix::new(2, 2, alloc::vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let a = mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = mat(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b).unwrap();
        // oracle: naive i-j-k accumulation
        let mut expect = Matrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a[(i, k)] * b[(k, j)];
                }
                expect[(i, j)] = acc;
            }
        }
        assert_eq!(c, expect);
        assert_eq!(c[(0, 0)], 58.0);
        assert_eq!(c[(1, 1)], 154.0);
    }

    #[test]
    fn matmul_identity_is_bitwise_noop() {
        let a = mat(2, 2, &[0.1, -0.2, 0.3, 0.7]);
        let id = Matrix::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let c = a.matmul(&id).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(
            a.matmul(&b),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn matmul_transpose_agrees_with_explicit_transpose() {
        let a = mat(2, 3, &[1.0, -2.0, 0.5, 0.25, 3.0, -1.0]);
        let b = mat(4, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, -0.6, 0.7, 0.8, 0.9, 1.0, -1.1, 1.2]);
        let fast = a.matmul_transpose(&b).unwrap();
        let slow = a.matmul(&b.transpose()).unwrap();
        // same ascending-k accumulation on both paths, so exact equality
        assert_eq!(fast, slow);
    }

    #[test]
    fn transpose_matmul_agrees_with_explicit_transpose() {
        let a = mat(3, 2, &[1.0, -2.0, 0.5, 0.25, 3.0, -1.0]);
        let b = mat(3, 4, &[0.1, 0.2, 0.3, -0.4, 0.5, -0.6, 0.7, 0.8, 0.9, 1.0, -1.1, 1.2]);
        let fast = a.transpose_matmul(&b).unwrap();
        let slow = a.transpose().matmul(&b).unwrap();
        assert_eq!(fast, slow);
        assert!(a.transpose_matmul(&mat(2, 2, &[1.0; 4])).is_err());
    }

    #[test]
    fn transpose_involution() {
        let a = mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn add_sub_roundtrip() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(2, 2, &[0.5, -0.25, 8.0, -16.0]);
        let sum = a.add(&b).unwrap();
        // dyadic values: subtraction recovers a exactly
        assert_eq!(sum.sub(&b).unwrap(), a);
    }

    #[test]
    fn max_abs_diff_and_norms() {
        let a = mat(1, 3, &[3.0, -4.0, 0.0]);
        let b = mat(1, 3, &[3.0, -4.5, 1.0]);
        assert_eq!(a.max_abs(), 4.0);
        assert_eq!(a.max_abs_diff(&b).unwrap(), 1.0);
        assert_eq!(a.frob_norm(), 5.0);
    }

    #[test]
    fn content_hash_is_bit_sensitive() {
        let a = mat(1, 2, &[1.0, 0.0]);
        let b = mat(1, 2, &[1.0, -0.0]);
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }
}
