//! Dense symmetric-matrix helpers shared by the solvers.
//!
//! All matrices handled here are small (p or q at most a few hundred), so we
//! convert to `nalgebra` for factorizations and keep `ndarray` as the ambient
//! container type.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub(crate) fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().copied())
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigendecomposition of a symmetric matrix: `(eigenvalues, eigenvectors)`
/// with eigenvectors stored as columns.
pub fn sym_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let eig = SymmetricEigen::new(to_nalgebra(a));
    let values = Array1::from_iter(eig.eigenvalues.iter().copied());
    let vectors = from_nalgebra(&eig.eigenvectors);
    (values, vectors)
}

pub fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    let (vals, _) = sym_eigen(a);
    vals.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Lower Cholesky factor of a symmetric positive-definite matrix, or `None`.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    nalgebra::Cholesky::new(to_nalgebra(a)).map(|c| from_nalgebra(c.l_dirty()))
}

pub fn is_positive_definite(a: &Array2<f64>) -> bool {
    nalgebra::Cholesky::new(to_nalgebra(a)).is_some()
}

/// Log-determinant of a symmetric positive-definite matrix.
pub fn spd_logdet(a: &Array2<f64>) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(to_nalgebra(a))
        .ok_or_else(|| Error::NotPositiveDefinite("log-determinant undefined".into()))?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    Ok(2.0 * acc)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let chol = nalgebra::Cholesky::new(to_nalgebra(a))
        .ok_or_else(|| Error::NotPositiveDefinite("inverse undefined".into()))?;
    Ok(from_nalgebra(&chol.inverse()))
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn spd_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let chol = nalgebra::Cholesky::new(to_nalgebra(a))
        .ok_or_else(|| Error::NotPositiveDefinite("solve undefined".into()))?;
    let rhs = nalgebra::DVector::from_iterator(b.len(), b.iter().copied());
    let x = chol.solve(&rhs);
    Ok(Array1::from_iter(x.iter().copied()))
}

/// Elementwise maximum norm.
pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
}

/// Maximum absolute off-diagonal entry; 0 for a 1x1 matrix.
pub fn max_abs_offdiag(a: &Array2<f64>) -> f64 {
    let mut m = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j {
                m = m.max(a[[i, j]].abs());
            }
        }
    }
    m
}

pub fn frob_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn is_symmetric(a: &Array2<f64>, tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[[i, j]] - a[[j, i]]).abs() > tol {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    0.5 * (a + &a.t())
}

/// Largest eigenvalue estimate of a symmetric PSD matrix by power iteration.
///
/// Deterministic start vector; `iters` Rayleigh refinements. The estimate is a
/// lower bound, which is fine for step-size initialization guarded by a line
/// search.
pub fn spectral_norm_est(a: &Array2<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    for _ in 0..iters {
        let av = a.dot(&v);
        let norm = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= f64::MIN_POSITIVE {
            return 0.0;
        }
        v = av / norm;
    }
    let av = a.dot(&v);
    v.dot(&av).abs()
}
