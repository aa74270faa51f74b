//! Small row-major dense matrix with fixed, deterministic loop orders.

use std::ops::{Index, IndexMut};

use crate::error::{ensure, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            DimensionMismatch,
            "{} elements for a {rows}x{cols} matrix",
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
        }
    }

    /// Rows gathered by index, in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(idx.len(), self.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn hcat(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        ensure!(
            parts.iter().all(|m| m.rows == rows),
            DimensionMismatch,
            "hcat of unequal row counts"
        );
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for m in parts {
                out.data[r * cols + c0..r * cols + c0 + m.cols].copy_from_slice(m.row(r));
                c0 += m.cols;
            }
        }
        Ok(out)
    }

    /// Splits the columns into consecutive blocks of the given widths.
    pub fn split_cols(&self, widths: &[usize]) -> Result<Vec<Self>> {
        ensure!(
            widths.iter().sum::<usize>() == self.cols,
            DimensionMismatch,
            "split of {} columns into {widths:?}",
            self.cols
        );
        let mut c0 = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(Self::from_fn(self.rows, w, |r, c| self[(r, c0 + c)]));
            c0 += w;
        }
        Ok(out)
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        ensure!(
            self.cols == rhs.rows,
            DimensionMismatch,
            "matmul {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == T::zero() {
                    continue;
                }
                let b = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in o.iter_mut().zip(b) {
                    *o += aik * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs`.
    pub fn t_matmul(&self, rhs: &Self) -> Result<Self> {
        ensure!(
            self.rows == rhs.rows,
            DimensionMismatch,
            "t_matmul {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut out = Self::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = rhs.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == T::zero() {
                    continue;
                }
                let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in o.iter_mut().zip(b) {
                    *o += ai * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self> {
        ensure!(
            self.cols == rhs.cols,
            DimensionMismatch,
            "matmul_t {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut out = Self::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                let b = rhs.row(j);
                let mut acc = T::zero();
                for (&x, &y) in a.iter().zip(b) {
                    acc += x * y;
                }
                out.data[i * rhs.rows + j] = acc;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn add_assign(&mut self, rhs: &Self) -> Result<()> {
        ensure!(
            self.shape() == rhs.shape(),
            DimensionMismatch,
            "add {:?} + {:?}",
            self.shape(),
            rhs.shape()
        );
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, rhs: &Self) -> Result<()> {
        ensure!(
            self.shape() == rhs.shape(),
            DimensionMismatch,
            "sub {:?} - {:?}",
            self.shape(),
            rhs.shape()
        );
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
        Ok(())
    }

    /// Adds `v` to every row.
    pub fn add_row_vector(&mut self, v: &[T]) {
        assert_eq!(v.len(), self.cols, "row vector length");
        for r in 0..self.rows {
            for (a, &b) in self.row_mut(r).iter_mut().zip(v) {
                *a += b;
            }
        }
    }

    /// Column sums.
    pub fn sum_rows(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "zip_map shape");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn hadamard(&self, rhs: &Self) -> Self {
        self.zip_map(rhs, |a, b| a * b)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest element-wise relative difference, `|a-b| / max(|a|, |b|, floor)`.
    pub fn max_rel_diff(&self, rhs: &Self, floor: f64) -> f64 {
        assert_eq!(self.shape(), rhs.shape(), "max_rel_diff shape");
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| {
                let (a, b) = (a.as_f64(), b.as_f64());
                if a == b {
                    0.0
                } else {
                    (a - b).abs() / a.abs().max(b.abs()).max(floor)
                }
            })
            .fold(0.0, f64::max)
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}
