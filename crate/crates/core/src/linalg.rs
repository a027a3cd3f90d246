//! Small dense linear-algebra helpers shared by the set and control modules.
//!
//! Everything here works on symmetric matrices and goes through the
//! symmetric eigendecomposition so that square roots stay symmetric.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest absolute entry of `P - Pᵀ`.
pub fn asymmetry(p: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..p.nrows() {
        for j in (i + 1)..p.ncols() {
            worst = worst.max((p[(i, j)] - p[(j, i)]).abs());
        }
    }
    worst
}

/// `(P + Pᵀ) / 2`.
pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// Eigenvalues and eigenvectors of the symmetric part of `p`.
pub fn sym_eigen(p: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(p))
}

pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    if p.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(p).eigenvalues.min()
}

/// Rebuild `V f(Λ) Vᵀ` from a symmetric eigendecomposition.
fn spectral_map(p: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = sym_eigen(p);
    let mut v = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = f(*lambda);
        v.column_mut(j).scale_mut(s);
    }
    symmetrize(&(v * eig.eigenvectors.transpose()))
}

/// Symmetric square root with eigenvalues clamped at zero.
pub fn sym_sqrt(p: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(p, |l| l.max(0.0).sqrt())
}

/// Symmetric inverse square root. Returns `None` unless `p` is positive definite.
pub fn sym_inv_sqrt(p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = sym_eigen(p);
    let floor = f64::EPSILON * eig.eigenvalues.amax().max(f64::MIN_POSITIVE) * p.nrows() as f64;
    if eig.eigenvalues.iter().any(|&l| l <= floor) {
        return None;
    }
    Some(spectral_map(p, |l| 1.0 / l.sqrt()))
}

/// Clamp the spectrum of the symmetric part of `p` from below.
pub fn clamp_spectrum(p: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    spectral_map(p, |l| l.max(floor))
}

/// Inverse of a symmetric positive definite matrix through Cholesky.
pub fn spd_inverse(p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = symmetrize(p).cholesky()?;
    Some(symmetrize(&chol.inverse()))
}

/// Solve `P x = b` for symmetric positive definite `P`.
pub fn spd_solve(p: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = symmetrize(p).cholesky()?;
    Some(chol.solve(b))
}

/// `P` if it is positive definite, otherwise `P + floor·I`.
pub fn regularize(p: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    if min_eigenvalue(p) > floor {
        p.clone()
    } else {
        p + DMatrix::identity(p.nrows(), p.ncols()) * floor
    }
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(dim, dim);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}

/// `xᵀ M y`.
pub fn bilinear(x: &DVector<f64>, m: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    x.dot(&(m * y))
}
