//! Small dense linear-algebra helpers shared by the CMA-ES engine, the
//! Gaussian process and the error measures.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Number of jitter doublings tried before giving up.
pub const MAX_JITTER_DOUBLINGS: u32 = 10;

/// Relative jitter scale: the first attempt adds `1e-10 * trace / n` to the
/// diagonal.
pub const JITTER_SCALE: f64 = 1e-10;

/// Cholesky factor of a symmetric matrix together with the diagonal jitter
/// that had to be added to make it factorizable.
pub struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Cholesky factorization with the diagonal repair policy: on failure add
/// `1e-10 * trace/n`, doubling the added amount up to ten times.
pub fn cholesky_jittered(matrix: &DMatrix<f64>) -> Result<JitteredCholesky> {
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok(JitteredCholesky { chol, jitter: 0.0 });
    }
    let n = matrix.nrows().max(1);
    let mean_diag = matrix.trace() / n as f64;
    let mut jitter = JITTER_SCALE * mean_diag.abs().max(f64::MIN_POSITIVE);
    for _ in 0..=MAX_JITTER_DOUBLINGS {
        let mut repaired = matrix.clone();
        for i in 0..matrix.nrows() {
            repaired[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(repaired) {
            return Ok(JitteredCholesky { chol, jitter });
        }
        jitter *= 2.0;
    }
    Err(Error::NumericalDegeneracy(format!(
        "{n}x{n} matrix is not positive definite after jitter {jitter:e}"
    )))
}

/// Average of a matrix and its transpose.
pub fn symmetrize(matrix: &mut DMatrix<f64>) {
    let n = matrix.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
}

/// Inverse square root `C^{-1/2}` of a symmetric positive definite matrix via
/// its eigendecomposition.
pub fn inverse_sqrt(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(matrix.clone());
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::NumericalDegeneracy(
            "matrix has a nonpositive eigenvalue".into(),
        ));
    }
    let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let b = &eig.eigenvectors;
    Ok(b * DMatrix::from_diagonal(&inv_sqrt) * b.transpose())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(matrix.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}
