//! Dense row-major tensors. Everything the model touches is rank 1 or 2;
//! vectors are stored as `1×d` matrices so one set of matrix ops covers all
//! call sites.

use super::scalar::Scalar;
use crate::error::{Result, SsmError};
use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, validating extents, length, and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(SsmError::Dimension(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(SsmError::Dimension(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        let t = Self { shape, data };
        if !t.is_finite() {
            return Err(SsmError::Numeric("non-finite tensor value".into()));
        }
        Ok(t)
    }

    /// Internal constructor for values produced by already-validated ops.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_parts(vec![rows, cols], vec![T::zero(); rows * cols])
    }

    pub fn full(rows: usize, cols: usize, v: T) -> Self {
        Self::from_parts(vec![rows, cols], vec![v; rows * cols])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.set(i, i, T::one());
        }
        t
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(SsmError::Dimension("no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(SsmError::Dimension("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn row_vector(v: &[T]) -> Result<Self> {
        Self::new(vec![1, v.len()], v.to_vec())
    }

    /// A `1×1` tensor holding one value.
    pub fn scalar(v: T) -> Self {
        Self::from_parts(vec![1, 1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2, "rank-2 accessor on rank-{}", self.shape.len());
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single element of a `1×1` tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_parts(self.shape.clone(), data)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a / b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn neg(&self) -> Self {
        self.map(|v| -v)
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (rhs.rows(), rhs.cols());
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut out = vec![T::zero(); m * n];
        // i-k-j ordering keeps both operands in row-major streaming access.
        for i in 0..m {
            for kk in 0..k {
                let a = self.data[i * k + kk];
                if a == T::zero() {
                    continue;
                }
                let rrow = &rhs.data[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * rrow[j];
                }
            }
        }
        Self::from_parts(vec![m, n], out)
    }

    pub fn transpose(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::from_parts(vec![n, m], out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Euclidean distance between two equally-shaped tensors.
    pub fn l2_distance(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt()
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} {:?}", self.shape, self.data)
    }
}
