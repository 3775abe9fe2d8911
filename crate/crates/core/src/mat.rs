//! Plain dense row-major matrix used for data that lives off the
//! differentiation tape: graph sequences, model parameters between steps,
//! correlation matrices, centroids.

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "Mat::from_vec: {} values for a {}x{} matrix",
            data.len(),
            rows,
            cols
        );
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { F::one() } else { F::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut F {
        &mut self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }

    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if self.at(i, j) != self.at(j, i) {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Flattens the strict upper triangle (i < j) in row-major order.
    pub fn upper_triangle(&self) -> Vec<F> {
        assert_eq!(self.rows, self.cols, "upper_triangle needs a square matrix");
        let mut out = Vec::with_capacity(self.rows * (self.rows - 1) / 2);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                out.push(self.at(i, j));
            }
        }
        out
    }

    /// Applies the same permutation to rows and columns: out[i][j] = self[p[i]][p[j]].
    pub fn permute_symmetric(&self, p: &[usize]) -> Self {
        assert_eq!(self.rows, self.cols);
        assert_eq!(p.len(), self.rows);
        Self::from_fn(self.rows, self.cols, |i, j| self.at(p[i], p[j]))
    }

    /// Permutes rows only: out[i] = self[p[i]].
    pub fn permute_rows(&self, p: &[usize]) -> Self {
        assert_eq!(p.len(), self.rows);
        Self::from_fn(self.rows, self.cols, |i, j| self.at(p[i], j))
    }
}
