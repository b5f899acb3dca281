//! Dense row-major matrix.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Dense 2-D array stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from row-major data, rejecting inconsistent sizes and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(shape_err(
                "Matrix::new",
                format!("{} entries for {rows}x{cols}", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(shape_err("Matrix::from_rows", format!("{cols} columns"), format!("row {i} has {}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Single-row matrix.
    pub fn row_vector(values: &[T]) -> Self {
        Self::from_raw(1, values.len(), values.to_vec())
    }

    /// Single-column matrix.
    pub fn column_vector(values: &[T]) -> Self {
        Self::from_raw(values.len(), 1, values.to_vec())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
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

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, "zip_map")?;
        Ok(Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub(crate) fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(op, self.shape_str(), other.shape_str()));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    fn gemm_into(a: &Self, ta: bool, b: &Self, tb: bool) -> Result<Self> {
        let (m, ka) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
        if ka != kb {
            return Err(shape_err(
                "matmul",
                format!("inner dimension {ka}"),
                format!("{kb} (lhs {}, rhs {})", a.shape_str(), b.shape_str()),
            ));
        }
        let mut out = Self::zeros(m, n);
        if m == 0 || n == 0 || ka == 0 {
            return Ok(out);
        }
        let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
        let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
        T::gemm(
            m,
            ka,
            n,
            T::one(),
            &a.data,
            rsa,
            csa,
            &b.data,
            rsb,
            csb,
            T::zero(),
            &mut out.data,
            n as isize,
            1,
        );
        Ok(out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        Self::gemm_into(self, false, other, false)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        Self::gemm_into(self, true, other, false)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        Self::gemm_into(self, false, other, true)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds `v` to every row.
    pub fn add_row_broadcast(&mut self, v: &[T]) -> Result<()> {
        if v.len() != self.cols {
            return Err(shape_err("add_row_broadcast", format!("{} entries", self.cols), format!("{}", v.len())));
        }
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (a, &b) in row.iter_mut().zip(v) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Column sums, accumulated in row order.
    pub fn column_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn column_means(&self) -> Vec<T> {
        let n = T::from_usize(self.rows.max(1)).unwrap();
        self.column_sums().into_iter().map(|s| s / n).collect()
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len().max(1)).unwrap()
    }

    /// Gathers the given rows in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::from_raw(idx.len(), self.cols, data)
    }

    /// Columns `[start, end)`.
    pub fn select_cols(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols, "column range out of bounds");
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Self::from_raw(self.rows, end - start, data)
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(shape_err("hstack", format!("{} rows", self.rows), format!("{} rows", other.rows)));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Self::from_raw(self.rows, self.cols + other.cols, data))
    }

    /// Vertical concatenation.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(shape_err("vstack", format!("{} cols", self.cols), format!("{} cols", other.cols)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self::from_raw(self.rows + other.rows, self.cols, data))
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(Matrix::<f64>::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 2.0);
        let b = Matrix::from_fn(4, 2, |i, j| (i as f64) - (j as f64) * 1.5);
        let naive = Matrix::from_fn(3, 2, |i, j| (0..4).map(|k| a[(i, k)] * b[(k, j)]).sum());
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive) < 1e-12);
        assert!(a.transpose().t_matmul(&b).unwrap().max_abs_diff(&naive) < 1e-12);
        assert!(a.matmul_t(&b.transpose()).unwrap().max_abs_diff(&naive) < 1e-12);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn stacking() {
        let a = Matrix::from_fn(2, 1, |i, _| i as f64);
        let b = Matrix::from_fn(2, 2, |i, j| (i + j) as f64);
        let h = a.hstack(&b).unwrap();
        assert_eq!(h.row(1), &[1.0, 1.0, 2.0]);
        assert_eq!(h.select_cols(1, 3), b);
        assert_eq!(b.vstack(&b).unwrap().rows(), 4);
    }
}
