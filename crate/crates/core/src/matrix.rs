//! Dense row-major matrices with a fixed, documented accumulation order.
//!
//! Attention outputs must be reproducible bit-for-bit across padding modes,
//! so every product here accumulates along the shared dimension in ascending
//! index order and nothing ever reassociates a sum.

use crate::{Error, Result, Scalar};

/// Dense row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Wrap an existing row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix buffer holds {} values, expected {rows}x{cols} = {}",
                data.len(),
                rows * cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Select a contiguous row range as a new matrix.
    pub fn row_slice(&self, start: usize, end: usize) -> Matrix<T> {
        assert!(start <= end && end <= self.rows);
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self * rhs`. Each output element accumulates over the shared
    /// dimension in ascending order, matching [`row_times_matrix`] exactly.
    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let rhs_row = rhs.row(k);
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for j in 0..rhs.cols {
                    out_row[j] = out_row[j] + a * rhs_row[j];
                }
            }
        }
        Ok(out)
    }
}

/// `x * m` for a single row vector; bit-identical to `matmul` on a 1-row matrix.
pub fn row_times_matrix<T: Scalar>(x: &[T], m: &Matrix<T>) -> Result<Vec<T>> {
    if x.len() != m.rows {
        return Err(Error::Shape(format!(
            "row vector of width {} against {}x{} matrix",
            x.len(),
            m.rows,
            m.cols
        )));
    }
    let mut out = vec![T::zero(); m.cols];
    for (k, &a) in x.iter().enumerate() {
        let row = m.row(k);
        for j in 0..m.cols {
            out[j] = out[j] + a * row[j];
        }
    }
    Ok(out)
}

/// Dot product accumulated in ascending index order.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for i in 0..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn row_times_matrix_matches_matmul_bitwise() {
        let m = Matrix::from_fn(5, 4, |i, j| ((i * 7 + j * 3) as f64).sin());
        let x: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).cos()).collect();
        let via_row = row_times_matrix(&x, &m).unwrap();
        let via_mat = Matrix::from_vec(1, 5, x).unwrap().matmul(&m).unwrap();
        assert_eq!(via_row.as_slice(), via_mat.row(0));
    }

    #[test]
    fn identity_is_neutral() {
        let m = Matrix::from_fn(4, 4, |i, j| (i * 4 + j) as f32);
        let id = Matrix::<f32>::identity(4);
        assert_eq!(m.matmul(&id).unwrap(), m);
    }
}
