//! Dense tensors of arbitrary order with the three multilinear primitives the
//! engine is built from: mode-n products, unfoldings, and foldings.
//!
//! Layout is row-major throughout: the last index varies fastest. The mode-n
//! unfolding puts mode n on the rows and enumerates the remaining modes in
//! their original order (last fastest) along the columns. With that pairing,
//! `fold(m.matmul(&x.unfold(n)), n, ..)` and `x.mode_n_product(&m, n)` run
//! their inner summations in the same order and agree bitwise, not just to
//! rounding.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch {
                op: "DenseTensor::from_vec",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for slot in t.data.iter_mut() {
            *slot = f(&idx);
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of a multi-index.
    #[inline]
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (d, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[d]);
            off = off * self.shape[d] + i;
        }
        off
    }

    #[inline]
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    /// `(outer, extent, inner)` stride split around `mode`: flat index of a
    /// multi-index with mode-`mode` component `j` is `(o * extent + j) * inner + i`.
    fn mode_strides(&self, mode: usize) -> (usize, usize, usize) {
        let outer: usize = self.shape[..mode].iter().product();
        let extent = self.shape[mode];
        let inner: usize = self.shape[mode + 1..].iter().product();
        (outer, extent, inner)
    }

    fn check_mode(&self, op: &'static str, mode: usize) -> Result<()> {
        if mode >= self.shape.len() {
            return Err(Error::ModeOutOfRange {
                op,
                mode,
                rank: self.shape.len(),
            });
        }
        Ok(())
    }

    /// Mode-n unfolding: rows indexed by mode `mode`, columns by the remaining
    /// modes in original order with the last varying fastest.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        self.check_mode("unfold", mode)?;
        let (outer, extent, inner) = self.mode_strides(mode);
        let cols = outer * inner;
        let mut m = Matrix::zeros(extent, cols);
        for o in 0..outer {
            for j in 0..extent {
                let src = &self.data[(o * extent + j) * inner..(o * extent + j + 1) * inner];
                let dst_off = j * cols + o * inner;
                m.data_mut()[dst_off..dst_off + inner].copy_from_slice(src);
            }
        }
        Ok(m)
    }

    /// Inverse of [`unfold`](Self::unfold) for the given target shape.
    pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
        if mode >= shape.len() {
            return Err(Error::ModeOutOfRange {
                op: "fold",
                mode,
                rank: shape.len(),
            });
        }
        let extent = shape[mode];
        let rest: usize = shape.iter().product::<usize>() / extent.max(1);
        if m.rows() != extent || m.cols() != rest {
            return Err(Error::ShapeMismatch {
                op: "fold",
                expected: vec![extent, rest],
                got: vec![m.rows(), m.cols()],
            });
        }
        let mut t = DenseTensor::zeros(shape);
        let (outer, extent, inner) = t.mode_strides(mode);
        let cols = outer * inner;
        for o in 0..outer {
            for j in 0..extent {
                let src_off = j * cols + o * inner;
                let dst = &mut t.data[(o * extent + j) * inner..(o * extent + j + 1) * inner];
                dst.copy_from_slice(&m.data()[src_off..src_off + inner]);
            }
        }
        Ok(t)
    }

    /// Mode-n product `self ×_mode m`: contracts mode `mode` against the
    /// columns of `m`, replacing its extent by `m.rows()`.
    pub fn mode_n_product(&self, m: &Matrix, mode: usize) -> Result<DenseTensor> {
        self.check_mode("mode_n_product", mode)?;
        if m.cols() != self.shape[mode] {
            return Err(Error::ModeMismatch {
                op: "mode_n_product",
                mode,
                expected: self.shape[mode],
                got: m.cols(),
            });
        }
        let (outer, extent, inner) = self.mode_strides(mode);
        let mut out_shape = self.shape.clone();
        out_shape[mode] = m.rows();
        let mut out = DenseTensor::zeros(&out_shape);
        let rows = m.rows();
        // Accumulate over the contracted index in ascending order, mirroring
        // the summation order of matmul on the unfolding.
        for o in 0..outer {
            for r in 0..rows {
                let dst = &mut out.data[(o * rows + r) * inner..(o * rows + r + 1) * inner];
                for j in 0..extent {
                    let w = m.get(r, j);
                    let src = &self.data[(o * extent + j) * inner..(o * extent + j + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src.iter()) {
                        *d += w * s;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Matrix slice of a rank-3 tensor at a fixed last index.
    pub fn slice_last(&self, idx: usize) -> Matrix {
        assert_eq!(self.rank(), 3, "slice_last expects a rank-3 tensor");
        let (d0, d1, d2) = (self.shape[0], self.shape[1], self.shape[2]);
        assert!(idx < d2);
        Matrix::from_fn(d0, d1, |i, j| self.data[(i * d1 + j) * d2 + idx])
    }

    /// Write a matrix into a rank-3 tensor at a fixed last index.
    pub fn set_slice_last(&mut self, idx: usize, m: &Matrix) {
        assert_eq!(self.rank(), 3, "set_slice_last expects a rank-3 tensor");
        let (d0, d1, d2) = (self.shape[0], self.shape[1], self.shape[2]);
        assert!(idx < d2);
        assert_eq!((m.rows(), m.cols()), (d0, d1));
        for i in 0..d0 {
            for j in 0..d1 {
                self.data[(i * d1 + j) * d2 + idx] = m.get(i, j);
            }
        }
    }

    pub fn add(&self, other: &DenseTensor) -> DenseTensor {
        assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        DenseTensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn sub(&self, other: &DenseTensor) -> DenseTensor {
        assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        DenseTensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn scale(&self, s: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn relu(&self) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.max(0.0)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }
}
