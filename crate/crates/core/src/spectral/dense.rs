//! Square row-major dense matrices for oracle-scale computations.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, x) in d.iter().enumerate() {
            m[(i, i)] = *x;
        }
        m
    }

    /// Builds a matrix from its columns.
    pub fn from_columns(cols: &[Vec<f64>]) -> Self {
        let n = cols.len();
        let mut m = Self::zeros(n);
        for (j, col) in cols.iter().enumerate() {
            assert_eq!(col.len(), n, "column length mismatch");
            for (i, x) in col.iter().enumerate() {
                m[(i, j)] = *x;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|x| s * x).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self { n: self.n, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self { n: self.n, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    /// `I + s A`.
    pub fn shifted_identity(&self, s: f64) -> Self {
        let mut m = self.scale(s);
        for i in 0..self.n {
            m[(i, i)] += 1.0;
        }
        m
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            let row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in row.iter_mut().zip(&other.data[k * n..(k + 1) * n]) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        (0..self.n).map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (na, nb) = (self.n, other.n);
        let mut out = Self::zeros(na * nb);
        for ia in 0..na {
            for ja in 0..na {
                let a = self[(ia, ja)];
                if a == 0.0 {
                    continue;
                }
                for ib in 0..nb {
                    for jb in 0..nb {
                        out[(ia * nb + ib, ja * nb + jb)] = a * other[(ib, jb)];
                    }
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.n, other.n);
        self.data.iter().zip(&other.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.n).map(|j| (0..self.n).map(|i| self[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let p = (col..n)
                .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
                .expect("nonempty pivot range");
            let pivot = a[p * n + col];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::NumericFailure(format!("dense solve: singular matrix at column {col}")));
            }
            if p != col {
                for j in 0..n {
                    a.swap(p * n + j, col * n + j);
                }
                x.swap(p, col);
            }
            for r in col + 1..n {
                let factor = a[r * n + col] / pivot;
                if factor == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] -= factor * a[col * n + j];
                }
                x[r] -= factor * x[col];
            }
        }
        for col in (0..n).rev() {
            let s: f64 = (col + 1..n).map(|j| a[col * n + j] * x[j]).sum();
            x[col] = (x[col] - s) / a[col * n + col];
        }
        Ok(x)
    }

    /// Inverse by Gauss–Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut inv = Self::identity(n).data;
        for col in 0..n {
            let p = (col..n)
                .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
                .expect("nonempty pivot range");
            let pivot = a[p * n + col];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::NumericFailure(format!("dense inverse: singular matrix at column {col}")));
            }
            if p != col {
                for j in 0..n {
                    a.swap(p * n + j, col * n + j);
                    inv.swap(p * n + j, col * n + j);
                }
            }
            for j in 0..n {
                a[col * n + j] /= pivot;
                inv[col * n + j] /= pivot;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[r * n + col];
                if factor == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[r * n + j] -= factor * a[col * n + j];
                    inv[r * n + j] -= factor * inv[col * n + j];
                }
            }
        }
        Ok(Self { n, data: inv })
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_and_inverse_agree() {
        let a = DenseMatrix::from_fn(4, |i, j| if i == j { 4.0 } else { 1.0 / (1.0 + i as f64 + 2.0 * j as f64) });
        let b = [1.0, -2.0, 0.5, 3.0];
        let x = a.solve(&b).unwrap();
        let ax = a.matvec(&x);
        for (p, q) in ax.iter().zip(&b) {
            assert!((p - q).abs() < 1e-14);
        }
        let inv = a.inverse().unwrap();
        assert!(inv.matmul(&a).max_abs_diff(&DenseMatrix::identity(4)) < 1e-14);
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = DenseMatrix::from_fn(2, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(a.solve(&[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
        assert!(DenseMatrix::zeros(2).inverse().is_err());
    }

    #[test]
    fn kron_with_identity() {
        let t = DenseMatrix::from_fn(2, |i, j| (i * 2 + j) as f64);
        let k = DenseMatrix::identity(3).kron(&t);
        assert_eq!(k.dim(), 6);
        assert_eq!(k[(2, 3)], t[(0, 1)]);
        assert_eq!(k[(0, 2)], 0.0);
        let k = t.kron(&DenseMatrix::identity(3));
        assert_eq!(k[(0, 3)], t[(0, 1)]);
        assert_eq!(k[(1, 4)], t[(0, 1)]);
    }

    #[test]
    fn norms() {
        let a = DenseMatrix::from_fn(2, |i, j| [[1.0, -2.0], [3.0, 4.0]][i][j]);
        assert_eq!(a.norm_inf(), 7.0);
        assert_eq!(a.norm_one(), 6.0);
    }
}
