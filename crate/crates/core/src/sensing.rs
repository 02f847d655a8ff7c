//! Sensing-matrix machinery: random semi-unitary pilot matrices and the
//! entropy-minimizing adaptive design built from the predicted error
//! covariance.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};

/// Eigenvalues closer than this (relative to the spectral norm) are treated as
/// one multiplicity group when randomizing eigenvectors.
const EIGEN_GROUP_TOL: f64 = 1e-9;

/// Semi-unitary M x N_t pilot combining matrix, A A^H = I.
#[derive(Debug, Clone)]
pub struct SensingMatrix {
    mat: CMat,
}

impl SensingMatrix {
    /// Wraps a matrix after checking the semi-unitary property to 1e-10.
    pub fn new(mat: CMat) -> Result<Self> {
        let m = mat.nrows();
        let deviation = (&mat * mat.adjoint() - CMat::identity(m, m)).norm();
        if deviation > 1e-10 {
            return Err(Error::NotSemiUnitary { deviation });
        }
        Ok(Self { mat })
    }

    pub fn n_pilots(&self) -> usize {
        self.mat.nrows()
    }

    pub fn n_antennas(&self) -> usize {
        self.mat.ncols()
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    /// A h
    pub fn apply(&self, h: &CVec) -> CVec {
        &self.mat * h
    }

    /// A C A^H
    pub fn project_covariance(&self, c: &CMat) -> CMat {
        &self.mat * c * self.mat.adjoint()
    }
}

/// Haar-distributed row space: orthonormalize an i.i.d. complex Gaussian
/// N_t x M matrix by QR with the usual phase fix, then take the adjoint.
pub fn random_semi_unitary<R: Rng + ?Sized>(
    n_pilots: usize,
    n_antennas: usize,
    rng: &mut R,
) -> Result<SensingMatrix> {
    if n_pilots == 0 || n_pilots > n_antennas {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= M <= N_t, got M={n_pilots}, N_t={n_antennas}"
        )));
    }
    let g = linalg::sample_cn_matrix(n_antennas, n_pilots, rng);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    // Fix column phases so the distribution is exactly Haar.
    let mut cols = CMat::zeros(n_antennas, n_pilots);
    for j in 0..n_pilots {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        cols.set_column(j, &(q.column(j) * phase));
    }
    SensingMatrix::new(cols.adjoint())
}

/// Rows are the conjugate-transposed top-M eigenvectors of `q_pred`
/// (eigenvalues descending). Within an eigenspace of multiplicity > 1, a
/// uniformly random orthonormal basis of that eigenspace is used.
pub fn adaptive_sensing<R: Rng + ?Sized>(
    q_pred: &CMat,
    n_pilots: usize,
    rng: &mut R,
) -> Result<SensingMatrix> {
    let n = q_pred.nrows();
    if n_pilots == 0 || n_pilots > n {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= M <= N_t, got M={n_pilots}, N_t={n}"
        )));
    }
    let (vals, vecs) = linalg::eigh_desc(q_pred);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let tol = EIGEN_GROUP_TOL * scale;

    // Rotate each multiplicity group by a Haar-random unitary.
    let mut rotated: Vec<CVec> = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (vals[start] - vals[end]).abs() <= tol {
            end += 1;
        }
        let size = end - start;
        if size == 1 {
            rotated.push(vecs[start].clone());
        } else {
            let mut basis = CMat::zeros(n, size);
            for (j, v) in vecs[start..end].iter().enumerate() {
                basis.set_column(j, v);
            }
            let u = random_semi_unitary(size, size, rng)?;
            let rot = basis * u.matrix().adjoint();
            for j in 0..size {
                rotated.push(rot.column(j).into_owned());
            }
        }
        start = end;
    }

    let mut a = CMat::zeros(n_pilots, n);
    for (i, v) in rotated.iter().take(n_pilots).enumerate() {
        a.set_row(i, &v.adjoint());
    }
    SensingMatrix::new(a)
}

/// Differential-entropy change of one Kalman update without forming Q_t:
/// -log|I + sigma_n^{-2} A Q_pred A^H|, always <= 0.
pub fn entropy_gap(q_pred: &CMat, a: &SensingMatrix, sigma_n2: f64) -> Result<f64> {
    let m = a.n_pilots();
    let inner = CMat::identity(m, m) + a.project_covariance(q_pred).scale(1.0 / sigma_n2);
    Ok(-linalg::logdet_hermitian(&inner)?)
}

/// Differential entropy of a Gaussian estimate with error covariance `q`,
/// in the real-Gaussian form N_t/2 (1 + log 2 pi) + 1/2 log|Q|.
pub fn differential_entropy(q: &CMat) -> Result<f64> {
    let n = q.nrows() as f64;
    Ok(n / 2.0 * (1.0 + (2.0 * std::f64::consts::PI).ln()) + 0.5 * linalg::logdet_hermitian(q)?)
}

/// The determinant objective |I + sigma_n^{-2} A Q A^H| maximized by the
/// adaptive design.
pub fn sensing_objective(q_pred: &CMat, a: &SensingMatrix, sigma_n2: f64) -> Result<f64> {
    Ok((-entropy_gap(q_pred, a, sigma_n2)?).exp())
}
