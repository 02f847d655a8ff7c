//! Evaluation metrics: beamforming capacity with the MRC beam from an
//! estimate, capacity efficiency ratio, and covariance error measures.

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm_hermitian, CMat, CVec};

/// Capacity log2(1 + |b^H h|^2 / sigma_n^2) with the beam b = h_est / ||h_est||.
/// A zero estimate yields a zero beam and capacity 0.
pub fn capacity(h_true: &CVec, h_est: &CVec, sigma_n2: f64) -> f64 {
    let norm = h_est.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let b = h_est.scale(1.0 / norm);
    let gain = (b.adjoint() * h_true)[(0, 0)].norm_sqr();
    (1.0 + gain / sigma_n2).log2()
}

/// capacity(h_true, h_est) / capacity(h_true, h_true), in [0, 1].
pub fn efficiency_ratio(h_true: &CVec, h_est: &CVec, sigma_n2: f64) -> f64 {
    let best = capacity(h_true, h_true, sigma_n2);
    if best == 0.0 {
        return 0.0;
    }
    capacity(h_true, h_est, sigma_n2) / best
}

/// (normalized spectral-norm error, subspace projection error):
/// ||C_est - C||_2 / ||C||_2 and ||C - P C||_F / ||C||_F with P the
/// orthogonal projector onto the column space of C_est (pseudo-inverse
/// based, so rank-deficient estimates are handled).
pub fn covariance_errors(c_true: &CMat, c_est: &CMat) -> Result<(f64, f64)> {
    if c_true.shape() != c_est.shape() {
        return Err(Error::DimensionMismatch {
            expected: c_true.nrows(),
            got: c_est.nrows(),
        });
    }
    let denom = spectral_norm_hermitian(c_true);
    if denom == 0.0 {
        return Err(Error::InvalidParameter("zero true covariance".into()));
    }
    let l2 = spectral_norm_hermitian(&(c_est - c_true)) / denom;

    // Projector onto col(C_est) from the SVD, keeping singular vectors above
    // a relative rank tolerance.
    let svd = c_est.clone().svd(true, false);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("SVD without U".into()))?;
    let tol = 1e-12 * svd.singular_values.max().max(1.0);
    let mut projector = CMat::zeros(c_est.nrows(), c_est.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let col = u.column(i);
            projector += &col * col.adjoint();
        }
    }
    let residual = c_true - projector * c_true;
    let proj = residual.norm() / c_true.norm();
    Ok((l2, proj))
}
