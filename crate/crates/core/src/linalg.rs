//! Small dense square matrices.
//!
//! Every matrix in the model is at most `(d+1) × (d+1)` with `d` a handful,
//! so plain row-major storage with a Cholesky factorization and a cyclic
//! Jacobi eigensolver is all that is needed.

use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![T::one(); n])
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        Self::from_diag(&vec![s; n])
    }

    /// Builds from row-major storage. Returns `None` when `data.len() != n*n`.
    pub fn from_row_major(n: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == n * n).then_some(Self { n, data })
    }

    /// Builds from nested rows. Returns `None` for ragged or non-square input.
    pub fn from_rows(rows: &[Vec<T>]) -> Option<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row-major entries.
    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.n.max(1)).map(<[T]>::to_vec).take(self.n).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        let half = T::lit(0.5);
        let mut s = self.clone();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn mat_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Lower Cholesky factor `L` with `M = L Lᵀ`; `None` if a pivot is not
    /// strictly positive. Only the lower triangle of `self` is read.
    pub fn cholesky(&self) -> Option<Cholesky<T>> {
        let n = self.n;
        let mut l = Self::zeros(n);
        for j in 0..n {
            let mut diag = self[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return None;
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Some(Cholesky { l })
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Eigenvalues are returned in ascending order; column `k` of the returned
    /// matrix is the eigenvector for eigenvalue `k`.
    pub fn symmetric_eigen(&self) -> (Vec<T>, SquareMatrix<T>) {
        let n = self.n;
        let mut a = self.symmetrized();
        let mut v = Self::identity(n);
        let eps = T::epsilon();
        for _sweep in 0..64 {
            let off: T = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            let scale = a.frobenius_norm();
            if off == T::zero() || off.sqrt() <= eps * eps * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let t = if theta == T::zero() { T::one() } else { t };
                    let c = T::one() / (t * t + T::one()).sqrt();
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
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Self::zeros(n);
        for (new, &old) in order.iter().enumerate() {
            for k in 0..n {
                vectors[(k, new)] = v[(k, old)];
            }
        }
        (values, vectors)
    }

    pub fn min_eigenvalue(&self) -> T {
        self.symmetric_eigen()
            .0
            .first()
            .copied()
            .unwrap_or_else(T::infinity)
    }

    /// Projects a symmetric matrix onto `{M : λ_min(M) ≥ floor}` by clipping
    /// eigenvalues. Matrices already satisfying the floor are returned
    /// unchanged (bit for bit).
    pub fn clamp_eigenvalues(&self, floor: T) -> (Self, bool) {
        let (values, vectors) = self.symmetric_eigen();
        if values.iter().all(|&v| v >= floor) {
            return (self.symmetrized(), false);
        }
        let n = self.n;
        let clipped: Vec<T> = values.iter().map(|&v| v.max(floor)).collect();
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let s: T = (0..n).map(|k| vectors[(i, k)] * clipped[k] * vectors[(j, k)]).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        (out, true)
    }

    pub fn cast<U: Scalar>(&self) -> SquareMatrix<U> {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for SquareMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for SquareMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Lower-triangular Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Cholesky<T> {
    l: SquareMatrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(&self) -> &SquareMatrix<T> {
        &self.l
    }

    /// Solves `L z = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.l.dim();
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[(i, k)] * z[k];
            }
            z[i] = s / self.l[(i, i)];
        }
        z
    }

    /// Solves `M x = b` with `M = L Lᵀ`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.dim();
        let mut x = self.solve_lower(b);
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// `log det M`.
    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        (0..self.l.dim()).map(|i| two * self.l[(i, i)].ln()).sum()
    }

    /// `(v)ᵀ M⁻¹ v`.
    pub fn mahalanobis_sq(&self, v: &[T]) -> T {
        self.solve_lower(v).iter().map(|&z| z * z).sum()
    }

    /// `L z`: maps a standard normal vector to one with covariance `M`.
    pub fn lower_mul(&self, z: &[T]) -> Vec<T> {
        let n = self.l.dim();
        (0..n).map(|i| (0..=i).map(|k| self.l[(i, k)] * z[k]).sum()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> SquareMatrix<f64> {
        SquareMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = m(&[&[4.0, 2.0, 0.4], &[2.0, 5.0, 1.0], &[0.4, 1.0, 3.0]]);
        let ch = a.cholesky().unwrap();
        let l = ch.factor();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| l[(i, k)] * l[(j, k)]).sum();
                assert!((s - a[(i, j)]).abs() < 1e-14);
            }
        }
        let x = ch.solve(&[1.0, 2.0, 3.0]);
        let back = a.mat_vec(&x);
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b - e).abs() < 1e-13);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(m(&[&[1.0, 2.0], &[2.0, 1.0]]).cholesky().is_none());
        assert!(m(&[&[0.0]]).cholesky().is_none());
    }

    #[test]
    fn jacobi_eigenvalues_2x2() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let (vals, vecs) = m(&[&[2.0, 1.0], &[1.0, 2.0]]).symmetric_eigen();
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        let v0 = [vecs[(0, 0)], vecs[(1, 0)]];
        assert!((v0[0] + v0[1]).abs() < 1e-14);
    }

    #[test]
    fn clamp_leaves_valid_matrix_untouched() {
        let a = m(&[&[0.02, -0.0142], &[-0.0142, 0.040082]]);
        let (b, changed) = a.clamp_eigenvalues(1e-8);
        assert!(!changed);
        assert_eq!(a, b);
    }

    #[test]
    fn clamp_lifts_singular_direction() {
        let a = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let (b, changed) = a.clamp_eigenvalues(0.5);
        assert!(changed);
        let vals = b.symmetric_eigen().0;
        assert!((vals[0] - 0.5).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
    }
}
