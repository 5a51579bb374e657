//! Small dense linear algebra over [`Scalar`].
//!
//! State spaces here are tiny (a handful of states), so everything is a
//! row-major `Vec` with LU factorization by partial pivoting.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Build from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m), "ragged matrix rows");
        Self {
            rows: n,
            cols: m,
            data: rows.iter().flatten().copied().collect(),
        }
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, k: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * k).collect(),
        }
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    /// `self * x` for a column vector `x`.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `xᵀ * self` for a row vector `x`.
    pub fn vec_mul(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        crate::scalar::max_abs(&self.data)
    }

    pub fn lu(&self) -> Option<Lu<T>> {
        Lu::new(self)
    }

    /// Solve `self * x = b`; `None` when the matrix is numerically singular.
    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        self.lu().map(|lu| lu.solve(b))
    }

    pub fn determinant(&self) -> T {
        assert_eq!(self.rows, self.cols);
        match Lu::factor(self) {
            (lu, _, sign, false) => (0..self.rows).fold(sign, |d, i| d * lu[(i, i)]),
            _ => T::zero(),
        }
    }

    /// Matrix with row `skip_r` and column `skip_c` removed.
    pub fn minor(&self, skip_r: usize, skip_c: usize) -> Self {
        let rows: Vec<Vec<T>> = (0..self.rows)
            .filter(|&i| i != skip_r)
            .map(|i| (0..self.cols).filter(|&j| j != skip_c).map(|j| self[(i, j)]).collect())
            .collect();
        if rows.is_empty() {
            return Self::zeros(0, self.cols.saturating_sub(1));
        }
        Self::from_rows(&rows)
    }

    /// Classical adjugate: transpose of the cofactor matrix.
    ///
    /// `O(n⁵)` via one determinant per entry; only meant for small `n`.
    pub fn adjugate(&self) -> Self {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        if n == 1 {
            return Self::identity(1);
        }
        Self::from_fn(n, n, |i, j| {
            let cof = self.minor(j, i).determinant();
            if (i + j) % 2 == 0 {
                cof
            } else {
                -cof
            }
        })
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization `PA = LU` with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    fn factor(a: &Matrix<T>) -> (Matrix<T>, Vec<usize>, T, bool) {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        let mut singular = false;
        let floor = a.max_abs().max(T::one()) * T::epsilon() * T::of(n.max(1) as f64);
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].abs()))
                    .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= floor {
                singular = true;
                continue;
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pkk = lu[(k, k)];
            for i in k + 1..n {
                let l = lu[(i, k)] / pkk;
                lu[(i, k)] = l;
                if l != T::zero() {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= l * u;
                    }
                }
            }
        }
        (lu, perm, sign, singular)
    }

    pub fn new(a: &Matrix<T>) -> Option<Self> {
        let (lu, perm, _, singular) = Self::factor(a);
        (!singular).then_some(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s = (0..i).fold(x[i], |s, j| s - self.lu[(i, j)] * x[j]);
            x[i] = s;
        }
        for i in (0..n).rev() {
            let s = (i + 1..n).fold(x[i], |s, j| s - self.lu[(i, j)] * x[j]);
            x[i] = s / self.lu[(i, i)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solve_small_system() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let x = a.solve(&[3.0, 5.0]).unwrap();
        assert_relative_eq!(x[0], 0.8, epsilon = 1e-14);
        assert_relative_eq!(x[1], 1.4, epsilon = 1e-14);
    }

    #[test]
    fn needs_pivoting() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(a.solve(&[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
        assert_eq!(a.determinant(), -1.0);
    }

    #[test]
    fn singular_is_detected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(a.solve(&[1.0, 1.0]).is_none());
        assert_eq!(a.determinant(), 0.0);
    }

    #[test]
    fn adjugate_times_matrix_is_det_identity() {
        let a = Matrix::from_rows(&[vec![2.0, -1.0, 0.5], vec![0.3, 1.0, 4.0], vec![1.0, 2.0, -3.0]]);
        let det = a.determinant();
        let prod = a.adjugate().matmul(&a);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { det } else { 0.0 };
                assert_relative_eq!(prod[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn vector_products() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![3.0, 7.0]);
        assert_eq!(a.vec_mul(&[1.0, 1.0]), vec![4.0, 6.0]);
        assert_eq!(a.transpose().mul_vec(&[1.0, 1.0]), a.vec_mul(&[1.0, 1.0]));
    }

    #[test]
    fn works_in_f32() {
        let a = Matrix::<f32>::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let x = a.solve(&[1.0, 2.0]).unwrap();
        let r = a.mul_vec(&x);
        assert!((r[0] - 1.0).abs() < 1e-6 && (r[1] - 2.0).abs() < 1e-6);
    }
}
