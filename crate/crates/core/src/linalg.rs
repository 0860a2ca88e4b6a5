//! Small dense symmetric-matrix routines for mixture teachers. Matrices are
//! row-major `n × n` slices.

use crate::error::{Error, Result};
use crate::real::Real;

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<F> {
    n: usize,
    l: Vec<F>,
}

impl<F: Real> Cholesky<F> {
    pub fn new(a: &[F], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: a.len(),
            });
        }
        let mut l = vec![F::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > F::zero()) || !s.is_finite() {
                        return Err(Error::domain("matrix is not positive definite"));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn factor(&self) -> &[F] {
        &self.l
    }

    /// `L y`.
    pub fn mul_lower(&self, y: &[F]) -> Vec<F> {
        let n = self.n;
        (0..n)
            .map(|i| (0..=i).fold(F::zero(), |s, k| s + self.l[i * n + k] * y[k]))
            .collect()
    }

    /// Solve `L y = b`.
    pub fn solve_lower(&self, b: &[F]) -> Vec<F> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let v = y[k];
                y[i] -= self.l[i * n + k] * v;
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.n;
        let mut x = self.solve_lower(b);
        for i in (0..n).rev() {
            for k in i + 1..n {
                let v = x[k];
                x[i] -= self.l[k * n + i] * v;
            }
            x[i] /= self.l[i * n + i];
        }
        x
    }

    pub fn log_det(&self) -> F {
        let two = F::lit(2.0);
        (0..self.n).fold(F::zero(), |s, i| s + two * self.l[i * self.n + i].ln())
    }
}

/// Eigendecomposition `A = U diag(λ) Uᵀ` of a symmetric matrix by cyclic
/// Jacobi rotations. Columns of `vectors` (row-major) are the eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen<F> {
    pub values: Vec<F>,
    pub vectors: Vec<F>,
}

pub fn sym_eigen<F: Real>(a: &[F], n: usize) -> Result<SymEigen<F>> {
    if a.len() != n * n {
        return Err(Error::Dimension {
            expected: n * n,
            got: a.len(),
        });
    }
    let mut m = a.to_vec();
    let mut u = vec![F::zero(); n * n];
    for i in 0..n {
        u[i * n + i] = F::one();
    }
    let scale = m.iter().fold(F::zero(), |s, &v| s + v * v).sqrt();
    for _sweep in 0..100 {
        let off = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .fold(F::zero(), |s, (i, j)| s + m[i * n + j] * m[i * n + j]);
        if off.sqrt() <= F::epsilon() * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == F::zero() {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (F::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + F::one()).sqrt());
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (ukp, ukq) = (u[k * n + p], u[k * n + q]);
                    u[k * n + p] = c * ukp - s * ukq;
                    u[k * n + q] = s * ukp + c * ukq;
                }
            }
        }
    }
    Ok(SymEigen {
        values: (0..n).map(|i| m[i * n + i]).collect(),
        vectors: u,
    })
}
