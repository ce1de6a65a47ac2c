//! Thin wrappers around the dense decompositions used by the tensor code.

use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("singular value decomposition did not converge")]
    SvdFailed,
    #[error("Hermitian eigendecomposition did not converge")]
    EigFailed,
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
}

/// Thin SVD `a = u * diag(s) * v^H` with `s` sorted in non-increasing order.
pub struct ThinSvd {
    pub u: Mat<C64>,
    pub s: Vec<f64>,
    pub v: Mat<C64>,
}

pub fn all_finite(a: MatRef<'_, C64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| {
        let z = a[(i, j)];
        z.re.is_finite() && z.im.is_finite()
    }))
}

pub fn thin_svd(a: MatRef<'_, C64>) -> Result<ThinSvd, LinalgError> {
    if !all_finite(a) {
        return Err(LinalgError::NonFinite);
    }
    let svd = a.thin_svd().map_err(|_| LinalgError::SvdFailed)?;
    let s = svd.S().column_vector().iter().map(|z| z.re).collect();
    Ok(ThinSvd { u: svd.U().to_owned(), s, v: svd.V().to_owned() })
}

/// Eigendecomposition of a Hermitian matrix; eigenvalues ascending.
pub fn hermitian_eigen(a: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>), LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    if !all_finite(a) {
        return Err(LinalgError::NonFinite);
    }
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|_| LinalgError::EigFailed)?;
    let vals = evd.S().column_vector().iter().map(|z| z.re).collect();
    Ok((vals, evd.U().to_owned()))
}

/// `exp(g)` for an anti-Hermitian generator `g`, via the eigendecomposition
/// of the Hermitian matrix `k = i g`, so that `exp(g) = V exp(-i E) V^H`.
pub fn expm_anti_hermitian(g: MatRef<'_, C64>) -> Result<Mat<C64>, LinalgError> {
    let n = g.nrows();
    if n != g.ncols() {
        return Err(LinalgError::NotSquare(n, g.ncols()));
    }
    let i = C64::i();
    // Symmetrize explicitly so rounding in `g` cannot leak into the eigensolver.
    let k = Mat::from_fn(n, n, |r, c| 0.5 * (i * g[(r, c)] + (i * g[(c, r)]).conj()));
    let (vals, vecs) = hermitian_eigen(k.as_ref())?;
    let phases: Vec<C64> = vals.iter().map(|&e| C64::from_polar(1.0, -e)).collect();
    let scaled = Mat::from_fn(n, n, |r, c| vecs[(r, c)] * phases[c]);
    Ok(&scaled * vecs.adjoint())
}

/// Unitary factor of the polar decomposition `w = q p` with `p` Hermitian
/// positive semidefinite.
pub fn polar_unitary(w: MatRef<'_, C64>) -> Result<Mat<C64>, LinalgError> {
    let svd = thin_svd(w)?;
    Ok(&svd.u * svd.v.adjoint())
}

/// Largest entry of `|a^H a - 1|`.
pub fn unitarity_defect(a: MatRef<'_, C64>) -> f64 {
    let prod = a.adjoint() * a;
    let mut worst = 0.0_f64;
    for c in 0..prod.ncols() {
        for r in 0..prod.nrows() {
            let target = if r == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            worst = worst.max((prod[(r, c)] - target).norm());
        }
    }
    worst
}
