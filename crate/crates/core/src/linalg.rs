//! Complex linear algebra helpers shared by the simulator, the tracker, and
//! the covariance estimators. Everything here operates on Hermitian matrices
//! via eigendecompositions, which keeps rank-deficient covariances usable.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// (m + m^H) / 2.
pub fn hermitianize(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
pub fn eigh_desc(m: &CMat) -> (Vec<f64>, Vec<CVec>) {
    let eig = hermitianize(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    (vals, vecs)
}

fn from_eig(vals: &[f64], vecs: &[CVec]) -> CMat {
    let n = vecs[0].len();
    let mut out = CMat::zeros(n, n);
    for (v, w) in vals.iter().zip(vecs) {
        if *v != 0.0 {
            out += (w * w.adjoint()).scale(*v);
        }
    }
    out
}

/// Nearest Hermitian PSD matrix in Frobenius norm: eigenvalue clipping at 0.
pub fn psd_project(m: &CMat) -> CMat {
    let (vals, vecs) = eigh_desc(m);
    let clipped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    from_eig(&clipped, &vecs)
}

/// Hermitian square root with eigenvalue clipping; errors if an eigenvalue is
/// significantly negative relative to the spectral radius.
pub fn hermitian_sqrt(m: &CMat) -> Result<CMat> {
    let (vals, vecs) = eigh_desc(m);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * scale.max(1.0) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let roots: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(from_eig(&roots, &vecs))
}

/// Spectral norm of a Hermitian matrix (largest |eigenvalue|).
pub fn spectral_norm_hermitian(m: &CMat) -> f64 {
    let (vals, _) = eigh_desc(m);
    vals.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Inverse and log-determinant of a Hermitian positive-definite matrix.
pub fn hermitian_inverse_logdet(m: &CMat) -> Result<(CMat, f64)> {
    let (vals, vecs) = eigh_desc(m);
    if vals.iter().any(|&v| v <= 0.0) {
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let inv_vals: Vec<f64> = vals.iter().map(|v| 1.0 / v).collect();
    let logdet = vals.iter().map(|v| v.ln()).sum();
    Ok((from_eig(&inv_vals, &vecs), logdet))
}

/// log-determinant of a Hermitian positive-definite matrix.
pub fn logdet_hermitian(m: &CMat) -> Result<f64> {
    let (vals, _) = eigh_desc(m);
    if vals.iter().any(|&v| v <= 0.0) {
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(vals.iter().map(|v| v.ln()).sum())
}

/// Unnormalized circularly-symmetric complex Gaussian log-density of `y` with
/// zero mean and covariance `sigma`: -y^H Sigma^{-1} y - log|Sigma|.
/// The additive constant -M log(pi) is dropped; only differences across
/// candidate covariances are ever consumed.
pub fn cn_logpdf_unnormalized(y: &CVec, sigma: &CMat) -> Result<f64> {
    let (inv, logdet) = hermitian_inverse_logdet(sigma)?;
    let quad = (y.adjoint() * &inv * y)[(0, 0)].re;
    Ok(-quad - logdet)
}

/// Vector of i.i.d. CN(0, 1) entries.
pub fn sample_cn_std<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    CVec::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re / 2f64.sqrt(), im / 2f64.sqrt())
    })
}

/// Matrix with i.i.d. CN(0, 1) entries.
pub fn sample_cn_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re / 2f64.sqrt(), im / 2f64.sqrt())
    })
}

/// Draw from CN(0, C) via a Hermitian square root of C.
pub fn sample_cn<R: Rng + ?Sized>(cov: &CMat, rng: &mut R) -> Result<CVec> {
    let root = hermitian_sqrt(cov)?;
    Ok(&root * sample_cn_std(cov.nrows(), rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let g = sample_cn_matrix(n, n, rng);
        hermitianize(&(&g + &g))
    }

    #[test]
    fn psd_project_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_hermitian(5, &mut rng);
            let p = psd_project(&m);
            let pp = psd_project(&p);
            assert!((&p - &pp).norm() < 1e-10 * (1.0 + p.norm()));
            let (vals, _) = eigh_desc(&p);
            assert!(vals.iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn psd_projection_minimizes_frobenius_distance() {
        // Checked by eigen-reconstruction: among Hermitian PSD candidates built
        // from perturbed clipped spectra, the projection is closest.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_hermitian(4, &mut rng);
        let p = psd_project(&m);
        let base = (&m - &p).norm();
        let (vals, vecs) = eigh_desc(&m);
        for shift in [0.05, 0.2, 1.0] {
            let alt: Vec<f64> = vals.iter().map(|v| (v + shift).max(0.0)).collect();
            let q = from_eig(&alt, &vecs);
            assert!((&m - &q).norm() >= base - 1e-12);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = psd_project(&random_hermitian(6, &mut rng));
        let r = hermitian_sqrt(&m).unwrap();
        assert!((&r * &r - &m).norm() < 1e-9 * (1.0 + m.norm()));
    }

    #[test]
    fn inverse_logdet_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = sample_cn_matrix(5, 5, &mut rng);
        let m = &g * g.adjoint() + CMat::identity(5, 5);
        let (inv, logdet) = hermitian_inverse_logdet(&m).unwrap();
        assert!((&m * &inv - CMat::identity(5, 5)).norm() < 1e-9);
        let det = m.clone().determinant();
        assert!((logdet - det.re.ln()).abs() < 1e-8);
    }

    #[test]
    fn cn_samples_have_requested_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = sample_cn_matrix(3, 3, &mut rng);
        let cov = &g * g.adjoint();
        let n = 40_000;
        let mut acc = CMat::zeros(3, 3);
        for _ in 0..n {
            let z = sample_cn(&cov, &mut rng).unwrap();
            acc += &z * z.adjoint();
        }
        acc /= Complex64::new(n as f64, 0.0);
        assert!((&acc - &cov).norm() / cov.norm() < 0.05);
    }
}
