//! Dense row-major matrices and the small linear-algebra kit the rest of the
//! crate builds on.
//!
//! Everything is `f64`; the crate's tolerance contracts (1e-8 .. 1e-12) are not
//! attainable in single precision.

use crate::error::{Error, Result};
use rayon::prelude::*;
use std::ops::{Index, IndexMut};

/// Work threshold (multiply-adds) above which `matmul` parallelizes over
/// output rows. Row-parallelism keeps each output entry's summation order
/// unchanged, so results are bit-identical to the serial path.
const PAR_FLOP_THRESHOLD: usize = 1 << 20;

/// Dense matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a flat row-major buffer. Fails if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "Matrix::from_vec",
                expected: vec![rows, cols],
                got: vec![data.len()],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * other`. Panics on an inner-dimension mismatch; shape errors on
    /// user-facing paths are caught before they reach here.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: inner dimensions {} and {} differ",
            self.cols, other.rows
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        let flops = self.rows * self.cols * other.cols;
        let do_row = |r: usize, out_row: &mut [f64]| {
            let a_row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        };
        if flops >= PAR_FLOP_THRESHOLD && self.rows > 1 {
            out.data
                .par_chunks_mut(other.cols)
                .enumerate()
                .for_each(|(r, row)| do_row(r, row));
        } else {
            for r in 0..self.rows {
                do_row(r, &mut out.data[r * other.cols..(r + 1) * other.cols]);
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                if (self.get(r, c) - self.get(c, r)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// `(M + M^T) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        assert_eq!(self.rows, self.cols);
        Matrix::from_fn(self.rows, self.cols, |r, c| {
            0.5 * (self.get(r, c) + self.get(c, r))
        })
    }

    /// First `k` columns.
    pub fn take_cols(&self, k: usize) -> Matrix {
        assert!(k <= self.cols);
        let mut out = Matrix::zeros(self.rows, k);
        for r in 0..self.rows {
            out.data[r * k..(r + 1) * k].copy_from_slice(&self.data[r * self.cols..r * self.cols + k]);
        }
        out
    }

    /// Columns of `self` followed by columns of `other` (same row count).
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(self.rows, cols);
        for r in 0..self.rows {
            out.data[r * cols..r * cols + self.cols]
                .copy_from_slice(&self.data[r * self.cols..(r + 1) * self.cols]);
            out.data[r * cols + self.cols..(r + 1) * cols]
                .copy_from_slice(&other.data[r * other.cols..(r + 1) * other.cols]);
        }
        out
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.max(0.0)).collect(),
        }
    }

    /// Row-wise softmax. Rows sum to 1 and every entry is strictly positive;
    /// an all-equal row (e.g. all zeros) maps to the uniform distribution.
    pub fn row_softmax(&self) -> Matrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = out.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        out
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Orthonormal basis for the column span, via twice-iterated modified
    /// Gram-Schmidt. Columns that are (numerically) dependent on earlier ones
    /// are replaced by standard-basis completions, so the result always has
    /// exactly `self.cols()` orthonormal columns.
    pub fn orthonormalize_columns(&self) -> Matrix {
        let (m, n) = (self.rows, self.cols);
        assert!(n <= m, "cannot orthonormalize {n} columns in dimension {m}");
        let mut q = self.clone();
        let mut kept: Vec<bool> = vec![true; n];
        for j in 0..n {
            for _pass in 0..2 {
                for i in 0..j {
                    if !kept[i] {
                        continue;
                    }
                    let dot: f64 = (0..m).map(|r| q.get(r, i) * q.get(r, j)).sum();
                    for r in 0..m {
                        let v = q.get(r, j) - dot * q.get(r, i);
                        q.set(r, j, v);
                    }
                }
            }
            let norm: f64 = (0..m).map(|r| q.get(r, j).powi(2)).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for r in 0..m {
                    q.set(r, j, q.get(r, j) / norm);
                }
            } else {
                kept[j] = false;
            }
        }
        // Replace dropped columns with orthonormal completions.
        for j in 0..n {
            if kept[j] {
                continue;
            }
            'candidate: for e in 0..m {
                let mut v = vec![0.0; m];
                v[e] = 1.0;
                for _pass in 0..2 {
                    for i in 0..n {
                        if i == j || (!kept[i] && i > j) {
                            continue;
                        }
                        let dot: f64 = (0..m).map(|r| q.get(r, i) * v[r]).sum();
                        for (r, vr) in v.iter_mut().enumerate() {
                            *vr -= dot * q.get(r, i);
                        }
                    }
                }
                let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.5 {
                    for (r, vr) in v.iter().enumerate() {
                        q.set(r, j, vr / norm);
                    }
                    kept[j] = true;
                    break 'candidate;
                }
            }
        }
        q
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        let prod = Matrix::eye(3).matmul(&a);
        assert_eq!(prod, a);
    }

    #[test]
    fn transpose_involution() {
        let a = Matrix::from_fn(3, 5, |r, c| (r as f64) - 2.0 * (c as f64));
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn row_softmax_uniform_on_zero_row() {
        let m = Matrix::zeros(2, 4).row_softmax();
        for r in 0..2 {
            for c in 0..4 {
                assert!((m.get(r, c) - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn row_softmax_hand_value() {
        // softmax([0, ln 3]) = [1/4, 3/4]
        let mut m = Matrix::zeros(1, 2);
        m.set(0, 1, 3.0_f64.ln());
        let s = m.row_softmax();
        assert!((s.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn row_softmax_rows_are_probabilities() {
        let m = Matrix::from_fn(5, 7, |r, c| ((r * 31 + c * 17) % 13) as f64 - 6.0);
        let s = m.row_softmax();
        for r in 0..5 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.row(r).iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn orthonormalize_full_rank() {
        let m = Matrix::from_fn(5, 3, |r, c| ((r * 7 + c * 3) % 11) as f64 + 0.5);
        let q = m.orthonormalize_columns();
        let g = q.transpose().matmul(&q);
        assert!(g.max_abs_diff(&Matrix::eye(3)) < 1e-12);
    }

    #[test]
    fn orthonormalize_rank_deficient_completes_basis() {
        // Second column is a multiple of the first.
        let mut m = Matrix::zeros(4, 2);
        for r in 0..4 {
            m.set(r, 0, (r + 1) as f64);
            m.set(r, 1, 2.0 * (r + 1) as f64);
        }
        let q = m.orthonormalize_columns();
        let g = q.transpose().matmul(&q);
        assert!(g.max_abs_diff(&Matrix::eye(2)) < 1e-12);
    }

    #[test]
    fn relu_clamps_negatives() {
        let m = Matrix::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(m.relu().data(), &[0.0, 0.0, 2.0]);
    }
}
