//! Row-major dense matrices and the handful of GEMM shapes the network
//! passes need.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
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

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_shape(&self, rows: usize, cols: usize, what: &str) -> Result<()> {
        if self.shape() != (rows, cols) {
            return Err(Error::Shape(format!(
                "{what}: expected {rows}x{cols}, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

/// `out = a · bᵀ`, with `a` m×k and `b` n×k.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.fill(0.0);
        return;
    }
    // SAFETY: slice lengths are checked above and the strides describe
    // row-major m×k, (n×k)ᵀ and m×n views inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = a · b`, with `a` m×k and `b` k×n.
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.fill(0.0);
        return;
    }
    // SAFETY: as in `matmul_nt`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = aᵀ · b`, with `a` k×m and `b` k×n.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.fill(0.0);
        return;
    }
    // SAFETY: as in `matmul_nt`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        Mat::from_fn(a.rows(), b.cols(), |r, c| {
            (0..a.cols()).map(|k| a.get(r, k) * b.get(k, c)).sum()
        })
    }

    fn transpose(a: &Mat) -> Mat {
        Mat::from_fn(a.cols(), a.rows(), |r, c| a.get(c, r))
    }

    #[test]
    fn gemm_variants_match_naive_product() {
        let a = Mat::from_fn(5, 3, |r, c| (r * 3 + c) as f64 * 0.25 - 1.0);
        let b = Mat::from_fn(3, 4, |r, c| ((r + 2 * c) % 5) as f64 - 2.0);
        let expected = naive(&a, &b);

        let mut out = vec![0.0; 20];
        matmul_nn(a.as_slice(), b.as_slice(), 5, 3, 4, &mut out);
        assert_eq!(out, expected.as_slice());

        let bt = transpose(&b);
        matmul_nt(a.as_slice(), bt.as_slice(), 5, 3, 4, &mut out);
        assert_eq!(out, expected.as_slice());

        let at = transpose(&a);
        matmul_tn(at.as_slice(), b.as_slice(), 3, 5, 4, &mut out);
        assert_eq!(out, expected.as_slice());
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Mat::from_vec(2, 2, vec![1.0; 3]).is_err());
    }
}
