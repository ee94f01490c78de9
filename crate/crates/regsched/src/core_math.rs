//! Dense row-major matrix/vector arithmetic plus the banded smoothing and
//! difference operators consumed by the regularizer catalog.
//!
//! Everything here is a pure function on immutable inputs; all arithmetic is
//! in f64.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense matrix, row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![1.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".to_string()));
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!(
                "non-finite entry at ({}, {})",
                pos / self.cols,
                pos % self.cols
            )));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "matmul shapes {}x{} and {}x{} are incompatible",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.get(i, l);
                if a == 0.0 {
                    continue;
                }
                let lhs_row = l * rhs.cols;
                let out_row = i * rhs.cols;
                for j in 0..rhs.cols {
                    out.data[out_row + j] += a * rhs.data[lhs_row + j];
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::Dimension("sub: shape mismatch".to_string()));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::Dimension("add: shape mismatch".to_string()));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }
}

/// Dense vector of f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!("non-finite entry at {pos}")));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

/// Element-by-element product of two equal-shape matrices.
pub fn hadamard(a: &Matrix, m: &Matrix) -> Result<Matrix> {
    if a.shape() != m.shape() {
        return Err(Error::Dimension(format!(
            "hadamard: shapes {:?} and {:?} differ",
            a.shape(),
            m.shape()
        )));
    }
    let data = a.data.iter().zip(&m.data).map(|(x, y)| x * y).collect();
    Ok(Matrix {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// Sum of absolute values.
pub fn norm_l1(v: &Vector) -> f64 {
    v.data.iter().map(|x| x.abs()).sum()
}

/// Sum of squared entries (no square root).
pub fn norm_l2_sq(v: &Vector) -> f64 {
    v.data.iter().map(|x| x * x).sum()
}

/// Square root of the sum of squared entries.
pub fn frobenius(a: &Matrix) -> f64 {
    a.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Banded smoothing operator: interior row i carries 1/3 at columns
/// i-1, i, i+1; the first and last rows carry 2/9 on their two boundary
/// entries. Boundary rows intentionally do not sum to 1 — the interior
/// stencil does.
pub fn smoothing_operator(n: usize) -> Result<Matrix> {
    if n < 3 {
        return Err(Error::Dimension(format!(
            "smoothing operator needs n >= 3, got {n}"
        )));
    }
    let mut m = Matrix::zeros(n, n);
    let third = 1.0 / 3.0;
    let boundary = third * (2.0 / 3.0);
    m.set(0, 0, boundary);
    m.set(0, 1, boundary);
    for i in 1..n - 1 {
        m.set(i, i - 1, third);
        m.set(i, i, third);
        m.set(i, i + 1, third);
    }
    m.set(n - 1, n - 2, boundary);
    m.set(n - 1, n - 1, boundary);
    Ok(m)
}

/// Banded first-difference operator: interior row i carries -1 at column
/// i-1 and +1 at column i+1; the first row is [-2, 2, 0, ...] and the last
/// row mirrors it. Every row sums to zero, so constants are annihilated.
pub fn difference_operator(n: usize) -> Result<Matrix> {
    if n < 3 {
        return Err(Error::Dimension(format!(
            "difference operator needs n >= 3, got {n}"
        )));
    }
    let mut m = Matrix::zeros(n, n);
    m.set(0, 0, -2.0);
    m.set(0, 1, 2.0);
    for i in 1..n - 1 {
        m.set(i, i - 1, -1.0);
        m.set(i, i + 1, 1.0);
    }
    m.set(n - 1, n - 2, -2.0);
    m.set(n - 1, n - 1, 2.0);
    Ok(m)
}
