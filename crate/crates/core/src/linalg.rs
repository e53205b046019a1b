//! Small dense linear-algebra helpers shared by the SDE and problem modules.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Eigenvalues below this magnitude are treated as rounding noise and
/// clamped to zero inside [`psd_sqrt`].
pub const PSD_CLAMP: f64 = 1e-10;

/// Symmetric square root of a positive semi-definite matrix via
/// eigendecomposition. Eigenvalues in `(-PSD_CLAMP, 0)` are clamped to zero;
/// anything more negative is an error (the input was not PSD).
pub fn psd_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = 0.5 * (mat + mat.transpose());
    let eig = sym.symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for lambda in roots.iter_mut() {
        if *lambda < -PSD_CLAMP {
            return Err(Error::NotPsd { eigenvalue: *lambda });
        }
        *lambda = lambda.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&roots);
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Symmetric square root with unconditional clamping of negative
/// eigenvalues. Callers that must distinguish rounding noise from genuine
/// indefiniteness use [`psd_sqrt`] instead.
pub fn psd_sqrt_clamped(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = 0.5 * (mat + mat.transpose());
    let eig = sym.symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for lambda in roots.iter_mut() {
        *lambda = lambda.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&roots);
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (mat + mat.transpose());
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &l| m.min(l))
}

/// Spectral (operator) norm of a symmetric matrix.
pub fn sym_operator_norm(mat: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (mat + mat.transpose());
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, &l| m.max(l.abs()))
}

/// Maximum absolute asymmetry `|A - A^T|_max`.
pub fn asymmetry(mat: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..mat.nrows() {
        for j in 0..i {
            worst = worst.max((mat[(i, j)] - mat[(j, i)]).abs());
        }
    }
    worst
}

/// `sum_ij a_ij b_ij`, the Frobenius pairing used for `Sigma : Hess u`.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Outer product `u v^T`.
pub fn outer(u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    u * v.transpose()
}
