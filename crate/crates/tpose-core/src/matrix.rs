//! Dense row-major f64 matrices and the handful of kernels the model needs.
//!
//! This is deliberately not a general linear algebra library: the model only
//! ever multiplies, adds, broadcasts a bias row and maps activations, and
//! keeping the kernels short lets the compiler vectorize the inner loops,
//! which is what training throughput lives and dies by.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds from row-major data; errors if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Invalid(alloc::format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// 1x1 matrix holding a single scalar.
    pub fn scalar(value: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (1, 1));
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn require_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        add_matmul(&mut out, self, other);
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.require_same_shape(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.require_same_shape(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.require_same_shape(other, "hadamard")?;
        Ok(self.zip(other, |a, b| a * b))
    }

    /// Elementwise quotient.
    pub fn div(&self, other: &Matrix) -> Result<Matrix> {
        self.require_same_shape(other, "div")?;
        Ok(self.zip(other, |a, b| a / b))
    }

    /// Adds a 1xN bias row to every row of an MxN matrix.
    pub fn add_bias(&self, bias: &Matrix) -> Result<Matrix> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(),
                rhs: bias.shape(),
            });
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sigmoid(&self) -> Matrix {
        self.map(math::sigmoid)
    }

    pub fn tanh(&self) -> Matrix {
        self.map(math::tanh)
    }

    pub fn relu(&self) -> Matrix {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// Elementwise exp with inputs clamped to [-40, 40] (see `math::EXP_CLAMP`).
    pub fn exp(&self) -> Matrix {
        self.map(math::exp_clamped)
    }

    /// `k * self + c` elementwise.
    pub fn affine(&self, k: f64, c: f64) -> Matrix {
        self.map(|v| k * v + c)
    }

    /// Elementwise max with a scalar floor.
    pub fn clamp_min(&self, floor: f64) -> Matrix {
        self.map(|v| if v < floor { floor } else { v })
    }

    pub fn ln(&self) -> Matrix {
        self.map(math::ln)
    }

    pub fn sqrt(&self) -> Matrix {
        self.map(math::sqrt)
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Matrix> {
        if start >= end || end > self.cols {
            return Err(Error::Invalid(alloc::format!(
                "column slice {}..{} out of range for {} columns",
                start,
                end,
                self.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, end - start);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..end]);
        }
        Ok(out)
    }

    /// `[self | other]` side by side; row counts must agree.
    pub fn concat_cols(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            out.row_mut(r)[..self.cols].copy_from_slice(self.row(r));
            out.row_mut(r)[self.cols..].copy_from_slice(other.row(r));
        }
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum of squared entries.
    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.require_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// `out += a * b`. Shapes must already agree; the row-major i-k-j loop order
/// keeps the inner loop a contiguous axpy the compiler can vectorize.
pub fn add_matmul(out: &mut Matrix, a: &Matrix, b: &Matrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!((out.rows, out.cols), (a.rows, b.cols));
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `out += a^T * b` without materializing the transpose.
pub fn add_matmul_at_b(out: &mut Matrix, a: &Matrix, b: &Matrix) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!((out.rows, out.cols), (a.cols, b.cols));
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let brow = b.row(i);
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `out += a * b^T` without materializing the transpose.
pub fn add_matmul_a_bt(out: &mut Matrix, a: &Matrix, b: &Matrix) {
    debug_assert_eq!(a.cols, b.cols);
    debug_assert_eq!((out.rows, out.cols), (a.rows, b.rows));
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = b.row(j);
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let eye = Matrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        assert_eq!(a.matmul(&eye).unwrap(), a);
    }

    #[test]
    fn matmul_known_product() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        match a.matmul(&b) {
            Err(Error::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, (2, 3));
                assert_eq!(rhs, (4, 2));
            }
            other => panic!("expected shape mismatch, got {:?}", other),
        }
        assert!(a.add(&b).is_err());
        assert!(a.hadamard(&b).is_err());
    }

    #[test]
    fn activations_hit_known_values() {
        let m = Matrix::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let r = m.relu();
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        let s = m.sigmoid();
        assert!((s.get(0, 1) - 0.5).abs() < 1e-15);
        let t = m.tanh();
        assert!((t.get(0, 2) - (2.0f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn exp_is_clamped() {
        let m = Matrix::from_vec(1, 2, vec![1e6, -1e6]).unwrap();
        let e = m.exp();
        assert!(e.is_finite());
        assert!(e.get(0, 0) < 1e18);
        assert!(e.get(0, 1) > 0.0);
    }

    #[test]
    fn add_bias_broadcasts_rows() {
        let m = Matrix::zeros(3, 2);
        let b = Matrix::from_vec(1, 2, vec![0.5, -1.0]).unwrap();
        let out = m.add_bias(&b).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), &[0.5, -1.0]);
        }
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![9.0, 8.0]).unwrap();
        let cat = a.concat_cols(&b).unwrap();
        assert_eq!(cat.shape(), (2, 3));
        assert_eq!(cat.slice_cols(0, 2).unwrap(), a);
        assert_eq!(cat.slice_cols(2, 3).unwrap(), b);
    }

    #[test]
    fn transpose_products_match_explicit() {
        // a: 3x2, b: 3x4 -> a^T b: 2x4, checked against naive translation.
        let a = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64 + 0.5);
        let b = Matrix::from_fn(3, 4, |r, c| (r as f64 - c as f64) * 0.25);
        let mut atb = Matrix::zeros(2, 4);
        add_matmul_at_b(&mut atb, &a, &b);
        for i in 0..2 {
            for j in 0..4 {
                let mut want = 0.0;
                for k in 0..3 {
                    want += a.get(k, i) * b.get(k, j);
                }
                assert!((atb.get(i, j) - want).abs() < 1e-12);
            }
        }
        // c: 2x3 = a^T? use a directly: a (3x2) * a^T (2x3) -> 3x3
        let mut aat = Matrix::zeros(3, 3);
        add_matmul_a_bt(&mut aat, &a, &a);
        for i in 0..3 {
            for j in 0..3 {
                let mut want = 0.0;
                for k in 0..2 {
                    want += a.get(i, k) * a.get(j, k);
                }
                assert!((aat.get(i, j) - want).abs() < 1e-12);
            }
        }
    }
}
