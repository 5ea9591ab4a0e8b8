//! Dense (date × instrument) grid of `f64` with NaN as the missing marker.
//!
//! Every value stored in a [`Matrix`] is either finite or missing; producers
//! go through [`Matrix::set`] or [`clean`] so infinities never leak into
//! downstream operators.

use serde::{Deserialize, Serialize};

/// Missing-value marker.
pub const MISSING: f64 = f64::NAN;

/// Maps non-finite values (NaN, ±inf) to the missing marker.
#[inline]
pub fn clean(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        MISSING
    }
}

#[inline]
pub fn is_missing(v: f64) -> bool {
    !v.is_finite()
}

/// Row-major grid: row = date index, column = instrument index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn missing(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![MISSING; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![clean(value); rows * cols] }
    }

    /// Builds a matrix from row-major data. Non-finite entries become missing.
    pub fn from_rows(rows: usize, cols: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        for v in &mut data {
            *v = clean(*v);
        }
        Self { rows, cols, data }
    }

    pub fn from_row_vecs(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), cols, "ragged rows");
                r.iter().copied()
            })
            .collect();
        Self::from_rows(rows.len(), cols, data)
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
    pub fn raw(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `None` when the cell is missing.
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let v = self.raw(r, c);
        if v.is_finite() {
            Some(v)
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = clean(v);
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies column `c` out as a time series.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.raw(r, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self.set(r, c, v);
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn count_missing(&self) -> usize {
        self.data.iter().filter(|v| is_missing(**v)).count()
    }

    /// Cell-wise map; the closure sees raw values (NaN for missing) and its
    /// output is cleaned.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| clean(f(v))).collect(),
        }
    }

    /// Cell-wise combination of two equally shaped matrices.
    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| clean(f(a, b)))
                .collect(),
        }
    }

    /// Keeps rows `range` (date slice).
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Matrix {
        let data = self.data[range.start * self.cols..range.end * self.cols].to_vec();
        Matrix { rows: range.len(), cols: self.cols, data }
    }

    /// Keeps the listed columns in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut out = Matrix::missing(self.rows, cols.len());
        for r in 0..self.rows {
            for (j, &c) in cols.iter().enumerate() {
                out.data[r * cols.len() + j] = self.raw(r, c);
            }
        }
        out
    }

    /// Bitwise equality that also treats two missing cells as equal.
    pub fn bit_identical(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

/// Value equality where two missing cells compare equal.
impl PartialEq for Matrix {
    fn eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self.data.iter().zip(&other.data).all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}
