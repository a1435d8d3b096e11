//! Small dense linear algebra over [`Scalar`].
//!
//! Problem sizes here are desk scale (tens of agents, parameter dimension in
//! the tens), so everything is row-major `Vec` storage with O(n^3) routines.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

pub fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(&a, &b)| a * b).sum()
}

pub fn norm_sq<S: Scalar>(x: &[S]) -> S {
    dot(x, x)
}

pub fn norm<S: Scalar>(x: &[S]) -> S {
    norm_sq(x).sqrt()
}

/// `y += alpha * x`
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub<S: Scalar>(x: &[S], y: &[S]) -> Vec<S> {
    x.iter().zip(y).map(|(&a, &b)| a - b).collect()
}

pub fn dist_sq<S: Scalar>(x: &[S], y: &[S]) -> S {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

pub fn scale<S: Scalar>(alpha: S, x: &[S]) -> Vec<S> {
    x.iter().map(|&v| alpha * v).collect()
}

/// Coordinate-wise mean of a non-empty set of equal-length vectors.
pub fn mean_vec<S: Scalar>(xs: &[Vec<S>]) -> Vec<S> {
    let n = xs.len();
    assert!(n > 0, "mean of an empty set");
    let mut out = vec![S::zero(); xs[0].len()];
    for x in xs {
        axpy(S::one(), x, &mut out);
    }
    let inv = S::one() / S::from_count(n);
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

pub fn all_finite<S: Scalar>(x: &[S]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_diag(d: &[S]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(CoreError::DimensionMismatch {
                expected: c,
                found: rows.iter().map(Vec::len).find(|&l| l != c).unwrap_or(c),
            });
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<S>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == S::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn scaled(&self, alpha: S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| alpha * v).collect(),
        }
    }

    /// `x^T M x`
    pub fn quad_form(&self, x: &[S]) -> S {
        dot(x, &self.mul_vec(x))
    }

    /// Largest absolute entry of `self - other^T`.
    pub fn asymmetry(&self) -> S {
        let mut worst = S::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square() && self.asymmetry() == S::zero()
    }

    /// Conjugate by a permutation: `out[p[i]][p[j]] = self[i][j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert!(self.is_square() && perm.len() == self.rows);
        let mut out = Self::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(perm[i], perm[j])] = self[(i, j)];
            }
        }
        out
    }
}

impl<S> std::ops::Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for Matrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted in
/// descending order.
pub fn symmetric_eigenvalues<S: Scalar>(m: &Matrix<S>) -> Result<Vec<S>> {
    let n = m.rows();
    if !m.is_square() {
        return Err(CoreError::DimensionMismatch {
            expected: m.rows(),
            found: m.cols(),
        });
    }
    if m.asymmetry() > S::epsilon() * S::lit(16.0) * max_abs(m).max(S::one()) {
        return Err(CoreError::NotSymmetric);
    }
    let mut a = m.clone();
    let scale_ref = frobenius(&a).max(S::min_positive_value());
    let tol = S::epsilon() * scale_ref;
    for _sweep in 0..100 {
        let off = off_diagonal_norm(&a);
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= S::min_positive_value() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (S::lit(2.0) * apq);
                let sign = if theta >= S::zero() { S::one() } else { -S::one() };
                let t = sign / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<S> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(eig)
}

fn max_abs<S: Scalar>(m: &Matrix<S>) -> S {
    m.data.iter().fold(S::zero(), |acc, &v| acc.max(v.abs()))
}

fn frobenius<S: Scalar>(m: &Matrix<S>) -> S {
    m.data.iter().map(|&v| v * v).sum::<S>().sqrt()
}

fn off_diagonal_norm<S: Scalar>(m: &Matrix<S>) -> S {
    let mut acc = S::zero();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if i != j {
                acc += m[(i, j)] * m[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<S: Scalar>(m: &Matrix<S>) -> Result<Matrix<S>> {
    let n = m.rows();
    if !m.is_square() {
        return Err(CoreError::DimensionMismatch {
            expected: n,
            found: m.cols(),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = m[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if acc <= S::zero() || !acc.is_finite() {
                    return Err(CoreError::NotPositiveDefinite);
                }
                l[(i, i)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solve `M x = b` for symmetric positive-definite `M`.
pub fn solve_spd<S: Scalar>(m: &Matrix<S>, b: &[S]) -> Result<Vec<S>> {
    let l = cholesky(m)?;
    let n = b.len();
    let mut y = vec![S::zero(); n];
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[(i, k)] * y[k];
        }
        y[i] = acc / l[(i, i)];
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in (i + 1)..n {
            acc -= l[(k, i)] * x[k];
        }
        x[i] = acc / l[(i, i)];
    }
    Ok(x)
}

/// Sum of floating-point values without intermediate rounding.
///
/// Keeps a non-overlapping expansion of partial sums (Shewchuk) and rounds
/// once at the end, so a multiset of values whose exact sum is zero, such as
/// pairwise-negated transfers, always sums to exactly `0`.
pub fn exact_sum<S: Scalar, I: IntoIterator<Item = S>>(values: I) -> S {
    let mut partials: Vec<S> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for idx in 0..partials.len() {
            let mut y = partials[idx];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != S::zero() {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    partials.into_iter().rev().fold(S::zero(), |acc, p| acc + p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jacobi_matches_circulant_spectrum() {
        // Ring of 5 with neighbour weight 0.3: eigenvalues 0.4 + 0.6 cos(2 pi k / 5).
        let mut w = Matrix::<f64>::zeros(5, 5);
        for i in 0..5 {
            w[(i, i)] = 0.4;
            w[(i, (i + 1) % 5)] = 0.3;
            w[(i, (i + 4) % 5)] = 0.3;
        }
        let eig = symmetric_eigenvalues(&w).unwrap();
        let mut expected: Vec<f64> = (0..5)
            .map(|k| 0.4 + 0.6 * (2.0 * std::f64::consts::PI * k as f64 / 5.0).cos())
            .collect();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in eig.iter().zip(&expected) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            symmetric_eigenvalues(&m),
            Err(CoreError::NotSymmetric)
        ));
    }

    #[test]
    fn spd_solve_recovers_known_solution() {
        let m = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 0.5],
            vec![0.0, 0.5, 2.0],
        ])
        .unwrap();
        let x = vec![1.0, -2.0, 0.5];
        let b = m.mul_vec(&x);
        let got = solve_spd(&m, &b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert_relative_eq!(g, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&m), Err(CoreError::NotPositiveDefinite)));
    }

    #[test]
    fn exact_sum_cancels_pairs() {
        let xs = [0.1f64, 1e16, -0.1, 3.3, -1e16, -3.3, 1e-300, -1e-300];
        assert_eq!(exact_sum(xs.iter().copied()), 0.0);
        // naive summation does not cancel here
        let naive: f64 = [1e16, 0.1, 3.3, -1e16, -0.1, -3.3].iter().sum();
        assert_ne!(naive, 0.0);
        assert_eq!(
            exact_sum([1e16, 0.1, 3.3, -1e16, -0.1, -3.3].iter().copied()),
            0.0
        );
    }

    #[test]
    fn exact_sum_is_exact_on_representable_total() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100].iter().copied()), 1.0);
    }
}
