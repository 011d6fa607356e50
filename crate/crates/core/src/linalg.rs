//! Small dense linear algebra over `f64`.
//!
//! Covers exactly what the analytic oracles need at desk scale (dimensions up
//! to a few dozen): Cholesky factorization for SPD solves, determinants and
//! inverses, and a cyclic Jacobi eigensolver for symmetric matrices. Nothing
//! here is tuned for large dimensions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major matrix.
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

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from row-major data. The slice length must equal `rows * cols`.
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix {
            rows,
            cols,
            data: data.to_vec(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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
    pub fn add_to(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                what: "matmul inner dimension",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.add_to(r, c, a * other.get(k, c));
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension {
                what: "matvec input",
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        Ok(out)
    }

    /// Adds `v` to every diagonal entry.
    pub fn add_diagonal(&self, v: f64) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out.add_to(i, i, v);
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension {
                what: "matrix add",
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.add(&other.scaled(-1.0))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Returns `(self + selfᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = 0.5 * (self.get(r, c) + self.get(c, r));
                out.set(r, c, v);
            }
        }
        out
    }

    /// Extracts the square submatrix indexed by `idx` on both axes.
    pub fn submatrix(&self, idx: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(idx.len(), idx.len());
        for (r, &ir) in idx.iter().enumerate() {
            for (c, &ic) in idx.iter().enumerate() {
                if ir >= self.rows || ic >= self.cols {
                    return Err(Error::invalid(format!(
                        "submatrix index ({ir}, {ic}) out of bounds for {}x{}",
                        self.rows, self.cols
                    )));
                }
                out.set(r, c, self.get(ir, ic));
            }
        }
        Ok(out)
    }

    /// Cholesky factorization `A = L Lᵀ` of a symmetric positive-definite
    /// matrix. Fails with a numeric error when a pivot is not positive.
    pub fn cholesky(&self) -> Result<Cholesky> {
        if self.rows != self.cols {
            return Err(Error::Dimension {
                what: "cholesky input (square)",
                expected: self.rows,
                got: self.cols,
            });
        }
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::numeric(format!(
                            "cholesky pivot {s:.3e} at row {i}: matrix not positive definite"
                        )));
                    }
                    l.set(i, j, libm::sqrt(s));
                } else {
                    l.set(i, j, s / l.get(j, j));
                }
            }
        }
        Ok(Cholesky { l })
    }

    /// Inverse of a symmetric positive-definite matrix via Cholesky.
    pub fn spd_inverse(&self) -> Result<Matrix> {
        let chol = self.cholesky()?;
        let n = self.rows;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            let col = chol.solve(&e)?;
            e[c] = 0.0;
            for r in 0..n {
                inv.set(r, c, col[r]);
            }
        }
        Ok(inv.symmetrized())
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Solves `A x = b` where `A = L Lᵀ`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.l.rows;
        if b.len() != n {
            return Err(Error::Dimension {
                what: "cholesky solve rhs",
                expected: n,
                got: b.len(),
            });
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l.get(i, k) * y[k];
            }
            y[i] = s / self.l.get(i, i);
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l.get(k, i) * x[k];
            }
            x[i] = s / self.l.get(i, i);
        }
        Ok(x)
    }

    /// `ln det A` for `A = L Lᵀ`.
    pub fn log_det(&self) -> f64 {
        (0..self.l.rows).map(|i| 2.0 * libm::log(self.l.get(i, i))).sum()
    }

    /// Applies the lower factor: `L x`.
    pub fn factor_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.l.matvec(x)
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns, so
/// `A = Q diag(λ) Qᵀ`. Sweeps are capped at 100; the off-diagonal mass
/// threshold is `1e-12` relative to the Frobenius norm.
pub fn jacobi_eigh(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if a.rows != a.cols {
        return Err(Error::Dimension {
            what: "jacobi input (square)",
            expected: a.rows,
            got: a.cols,
        });
    }
    let n = a.rows;
    let mut m = a.symmetrized();
    let mut q = Matrix::identity(n);
    let scale = m.frobenius_norm().max(1.0);

    let off_diag = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                s += 2.0 * m.get(r, c) * m.get(r, c);
            }
        }
        libm::sqrt(s)
    };

    let mut converged = false;
    for _sweep in 0..100 {
        if off_diag(&m) <= 1e-12 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for qi in (p + 1)..n {
                let apq = m.get(p, qi);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(qi, qi);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + libm::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + libm::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                // Rotate rows/columns p and q of m.
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, qi);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, qi, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(qi, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(qi, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let qkp = q.get(k, p);
                    let qkq = q.get(k, qi);
                    q.set(k, p, c * qkp - s * qkq);
                    q.set(k, qi, s * qkp + c * qkq);
                }
            }
        }
    }
    if !converged && off_diag(&m) > 1e-12 * scale {
        return Err(Error::numeric(format!(
            "jacobi eigensolver did not converge in 100 sweeps (off-diagonal {:.3e})",
            off_diag(&m)
        )));
    }
    let values = (0..n).map(|i| m.get(i, i)).collect();
    Ok((values, q))
}

/// Symmetric PSD square root via Jacobi eigendecomposition. Negative
/// eigenvalues (roundoff) are clamped to zero.
pub fn sqrt_psd(a: &Matrix) -> Result<Matrix> {
    let (values, q) = jacobi_eigh(a)?;
    let n = a.rows;
    let mut out = Matrix::zeros(n, n);
    for (k, &lam) in values.iter().enumerate() {
        let s = libm::sqrt(lam.max(0.0));
        if s == 0.0 {
            continue;
        }
        for r in 0..n {
            for c in 0..n {
                out.add_to(r, c, s * q.get(r, k) * q.get(c, k));
            }
        }
    }
    Ok(out)
}

/// `x - y` as a new vector.
pub fn vec_sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// Euclidean dot product.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Euclidean norm.
pub fn norm(x: &[f64]) -> f64 {
    libm::sqrt(dot(x, x))
}
