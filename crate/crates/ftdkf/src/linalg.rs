//! Small symmetric-matrix helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition estimate above which symmetric solves are treated as failed.
pub const COND_LIMIT: f64 = 1e12;

/// Force exact symmetry: (A + A^T) / 2.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(a)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    *sym_eigenvalues(a).first().unwrap()
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    *sym_eigenvalues(a).last().unwrap()
}

/// Symmetric positive semidefiniteness check with tolerance scaled to the
/// matrix magnitude.
pub fn is_psd(a: &DMatrix<f64>, tol: f64) -> bool {
    if !is_symmetric(a, tol) {
        return false;
    }
    let scale = max_eigenvalue(&a.abs()).max(1.0);
    min_eigenvalue(a) >= -tol * scale
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    (a - a.transpose()).amax() <= tol * a.amax().max(1.0)
}

/// Inverse of a symmetric positive definite matrix via eigendecomposition,
/// with a condition-number guard.
pub fn spd_inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(a);
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::Singular(context));
    }
    if max / min > COND_LIMIT {
        return Err(Error::Numerical(format!(
            "{context}: condition estimate {:.3e} exceeds {COND_LIMIT:.0e}",
            max / min
        )));
    }
    let inv_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| 1.0 / v),
    );
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&inv_vals) * q.transpose())))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix. Eigenvalues below
/// `PSEUDO_RANK_TOL` relative to the largest are treated as exact zeros, which
/// keeps near-rank-deficient inputs (e.g. strongly correlated joint
/// covariances) well behaved instead of amplifying noise directions.
pub fn spd_pseudo_inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    const PSEUDO_RANK_TOL: f64 = 1e-12;
    let sym = symmetrize(a);
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.max();
    if max <= 0.0 {
        return Err(Error::Singular(context));
    }
    let cut = PSEUDO_RANK_TOL * max;
    let inv_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&v| if v > cut { 1.0 / v } else { 0.0 }),
    );
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&inv_vals) * q.transpose())))
}

/// Solve A x = b for symmetric positive definite A.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    Ok(spd_inverse(a, context)? * b)
}

/// Lower Cholesky factor of a PSD matrix; eigenvalue fallback for the
/// semidefinite boundary (zero process noise is a legal input).
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(a);
    if let Some(chol) = sym.clone().cholesky() {
        return chol.l();
    }
    let eig = sym.symmetric_eigen();
    let vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&vals)
}

/// Minimum singular value.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    a.clone().svd(false, false).singular_values.min()
}
