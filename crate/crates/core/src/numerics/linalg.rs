use super::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    lower: Matrix,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solves `A·X = B` column by column.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.lower.rows();
        if b.rows() != n {
            return Err(Error::shape(
                "cholesky_solve",
                format!("system of order {n} with {} right-hand rows", b.rows()),
            ));
        }
        let l = &self.lower;
        let mut x = b.clone();
        for c in 0..b.cols() {
            // forward: L·y = b
            for i in 0..n {
                let mut acc = x[(i, c)];
                for k in 0..i {
                    acc -= l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = acc / l[(i, i)];
            }
            // backward: Lᵀ·x = y
            for i in (0..n).rev() {
                let mut acc = x[(i, c)];
                for k in i + 1..n {
                    acc -= l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = acc / l[(i, i)];
            }
        }
        Ok(x)
    }
}

/// Factors the symmetric part `(A + Aᵀ)/2` of a square matrix.
pub fn cholesky(a: &Matrix) -> Result<CholeskyFactor> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape(
            "cholesky",
            format!("{}x{} is not square", a.rows(), a.cols()),
        ));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut acc = 0.5 * (a[(i, j)] + a[(j, i)]);
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / ljj;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Solves `A·X = B` for symmetric positive definite `A`.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::shape(
            "cholesky_solve",
            format!("{}x{} system with {} right-hand rows", a.rows(), a.cols(), b.rows()),
        ));
    }
    cholesky(a)?.solve(b)
}

/// `true` when the smallest eigenvalue of the symmetric part of `a` exceeds
/// `-tol`, decided by attempting a Cholesky factorization of `a + tol·I`.
pub fn is_positive_semidefinite(a: &Matrix, tol: f64) -> bool {
    let mut shifted = a.clone();
    for i in 0..a.rows().min(a.cols()) {
        shifted[(i, i)] += tol;
    }
    cholesky(&shifted).is_ok()
}
