//! Small dense linear algebra: a column-major matrix, Cholesky factorization
//! and a symmetric power iteration. Sizes here are p x p with p in the
//! hundreds at most, so nothing is blocked or vectorized.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, DsplError, Result};
use crate::scalar::{dot, Scalar};

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Wraps column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_len("matrix storage", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix whose columns are the given slices.
    pub fn from_columns<C: AsRef<[T]>>(rows: usize, columns: &[C]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            check_len("matrix column", rows, c.as_ref().len())?;
            data.extend_from_slice(c.as_ref());
        }
        Ok(Self {
            rows,
            cols: columns.len(),
            data,
        })
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
    pub fn col(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        // chunks_exact on an empty row count would panic
        (0..self.cols).map(move |j| self.col(j))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        check_len("matrix-vector product", self.cols, x.len())?;
        let mut out = vec![T::zero(); self.rows];
        for (j, xj) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.col(j)) {
                *o += *a * *xj;
            }
        }
        Ok(out)
    }

    /// `selfᵀ * x`.
    pub fn tr_mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        check_len("transposed matrix-vector product", self.rows, x.len())?;
        Ok(self.columns().map(|c| dot(c, x)).collect())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[j * self.rows + i]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[j * self.rows + i]
    }
}

/// `scale * Σ_j weights[j] x_j x_jᵀ + shift * I`, where `x_j` are the columns of `x`.
/// Columns with zero weight are skipped.
pub fn weighted_gram<T: Scalar>(x: &Matrix<T>, weights: &[T], scale: T, shift: T) -> Matrix<T> {
    let p = x.rows();
    let mut g = Matrix::zeros(p, p);
    for (col, &w) in x.columns().zip(weights) {
        if w == T::zero() {
            continue;
        }
        let s = scale * w;
        for b in 0..p {
            let xb = s * col[b];
            if xb == T::zero() {
                continue;
            }
            for a in b..p {
                g[(a, b)] += col[a] * xb;
            }
        }
    }
    for b in 0..p {
        g[(b, b)] += shift;
        for a in b + 1..p {
            g[(b, a)] = g[(a, b)];
        }
    }
    g
}

/// Lower-triangular Cholesky factor `A = L Lᵀ` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Reads the lower triangle of `a`.
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        let n = a.rows();
        check_len("cholesky (square)", n, a.cols())?;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(DsplError::NotPositiveDefinite { pivot: j });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.dim();
        check_len("cholesky solve", n, b.len())?;
        let l = &self.l;
        // L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        Ok(y)
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power iteration.
pub fn largest_eigenvalue<T: Scalar>(a: &Matrix<T>, max_iter: usize, rel_tol: T) -> T {
    let n = a.rows();
    if n == 0 {
        return T::zero();
    }
    // deterministic, non-degenerate start
    let mut x: Vec<T> = (0..n)
        .map(|i| T::one() + T::lit(i as f64 / n as f64))
        .collect();
    let mut est = T::zero();
    for _ in 0..max_iter {
        let y = a.mul_vec(&x).expect("square matrix");
        let norm = dot(&y, &y).sqrt();
        if norm == T::zero() {
            return T::zero();
        }
        let next = dot(&x, &y) / dot(&x, &x);
        x = y.into_iter().map(|v| v / norm).collect();
        if (next - est).abs() <= rel_tol * next.abs() {
            return next;
        }
        est = next;
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd() -> Matrix<f64> {
        Matrix::from_col_major(3, 3, vec![4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]).unwrap()
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = spd();
        let b = [1.0, -2.0, 0.5];
        let x = Cholesky::factor(&a).unwrap().solve(&b).unwrap();
        let ax = a.mul_vec(&x).unwrap();
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_col_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(
            Cholesky::factor(&a),
            Err(DsplError::NotPositiveDefinite { pivot: 1 })
        ));
        let z = Matrix::<f64>::zeros(2, 2);
        assert!(Cholesky::factor(&z).is_err());
    }

    #[test]
    fn gram_matches_explicit_sum() {
        let x = Matrix::from_columns(2, &[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]).unwrap();
        let g = weighted_gram(&x, &[1.0, 0.0, 2.0], 2.0, 0.5);
        // 2*(1*[1,2][1,2]ᵀ + 2*[.5,.5][.5,.5]ᵀ) + 0.5 I
        assert_eq!(g[(0, 0)], 2.0 * (1.0 + 0.5) + 0.5);
        assert_eq!(g[(0, 1)], 2.0 * (2.0 + 0.5));
        assert_eq!(g[(1, 0)], g[(0, 1)]);
        assert_eq!(g[(1, 1)], 2.0 * (4.0 + 0.5) + 0.5);
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let a = Matrix::from_col_major(2, 2, vec![2.0f64, 1.0, 1.0, 2.0]).unwrap();
        let top = largest_eigenvalue(&a, 1000, 1e-14);
        assert!((top - 3.0).abs() < 1e-10);
    }

    #[test]
    fn transposed_product() {
        let x = Matrix::from_columns(2, &[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(x.tr_mul_vec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert_eq!(x.mul_vec(&[1.0, 1.0]).unwrap(), vec![4.0, 6.0]);
        assert!(x.mul_vec(&[1.0]).is_err());
    }
}
