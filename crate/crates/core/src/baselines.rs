//! Reference estimators the tracker is compared against: a plain Kalman
//! filter with a fixed process covariance, one-shot least squares, and
//! Yule-Walker autoregressive prediction.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::sensing::SensingMatrix;
use crate::tracker;

/// State of the plain Kalman filter baseline.
#[derive(Debug, Clone)]
pub struct KfState {
    pub h_hat: CVec,
    pub q: CMat,
}

impl KfState {
    /// Zero estimate with the stationary covariance Q_process / (1 - gamma^2),
    /// clamped to Q_process when gamma = 1.
    pub fn stationary(q_process: &CMat, gamma: f64) -> Self {
        let scale = 1.0 - gamma * gamma;
        let q = if scale > 1e-12 { q_process.scale(1.0 / scale) } else { q_process.clone() };
        Self { h_hat: CVec::zeros(q_process.nrows()), q }
    }
}

/// Energy-matched, direction-blind process covariance:
/// (1 - gamma^2) (tr C_bar / N) I with C_bar the mean of `covariances`.
pub fn energy_matched_process_cov(covariances: &[CMat], gamma: f64) -> Result<CMat> {
    if covariances.is_empty() {
        return Err(Error::NoSamples);
    }
    let n = covariances[0].nrows();
    let mean_trace =
        covariances.iter().map(|c| c.trace().re).sum::<f64>() / covariances.len() as f64;
    Ok(CMat::identity(n, n).scale((1.0 - gamma * gamma) * mean_trace / n as f64))
}

/// One predict/update cycle of the plain Kalman filter: h_pred = gamma h,
/// Q_pred = gamma^2 Q + Q_process, then the standard update. The returned
/// flag reports diagonal loading of a singular innovation matrix.
pub fn kf_step(
    state: &KfState,
    y: &CVec,
    a: &SensingMatrix,
    sigma_n2: f64,
    gamma: f64,
    q_process: &CMat,
) -> Result<(KfState, bool)> {
    let h_pred = state.h_hat.scale(gamma);
    let q_pred = linalg::hermitianize(&(state.q.scale(gamma * gamma) + q_process));
    let (h_hat, q, loaded) = tracker::kalman_update(&h_pred, &q_pred, y, a, sigma_n2)?;
    Ok((KfState { h_hat, q }, loaded))
}

/// Minimum-norm least-squares estimate h = A^+ y. For semi-unitary A the
/// pseudo-inverse reduces to A^H.
pub fn ls_estimate(y: &CVec, a: &SensingMatrix) -> Result<CVec> {
    let pinv = a
        .matrix()
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidParameter(format!("pseudo-inverse failed: {e}")))?;
    Ok(pinv * y)
}

/// One-step-ahead prediction from per-antenna scalar AR models fitted by
/// Yule-Walker on the sample autocovariance of `history`. The flag reports
/// diagonal loading of a singular Toeplitz system.
pub fn ar_predict(history: &[CVec], order: usize) -> Result<(CVec, bool)> {
    if order == 0 {
        return Err(Error::InvalidParameter("AR order must be >= 1".into()));
    }
    let t_len = history.len();
    if t_len < order + 1 {
        return Err(Error::InvalidParameter(format!(
            "AR order {order} needs at least {} samples, got {t_len}",
            order + 1
        )));
    }
    let n = history[0].len();
    let mut prediction = CVec::zeros(n);
    let mut loaded = false;
    for k in 0..n {
        let z: Vec<Complex64> = history.iter().map(|h| h[k]).collect();
        // Unbiased sample autocovariance r(l) = mean over t of z_t conj(z_{t-l}).
        let r: Vec<Complex64> = (0..=order)
            .map(|l| {
                let sum: Complex64 = (l..t_len).map(|t| z[t] * z[t - l].conj()).sum();
                sum / (t_len - l) as f64
            })
            .collect();
        let mut toeplitz = CMat::from_fn(order, order, |i, j| {
            if i >= j {
                r[i - j]
            } else {
                r[j - i].conj()
            }
        });
        let rhs = CVec::from_fn(order, |i, _| r[i + 1]);
        let coeffs = match solve_hermitian(&toeplitz, &rhs) {
            Some(c) => c,
            None => {
                let load = 1e-9 * r[0].re.abs().max(1.0);
                toeplitz += CMat::identity(order, order).scale(load);
                loaded = true;
                solve_hermitian(&toeplitz, &rhs)
                    .unwrap_or_else(|| CVec::zeros(order))
            }
        };
        let mut next = Complex64::new(0.0, 0.0);
        for (lag, c) in coeffs.iter().enumerate() {
            next += c * z[t_len - 1 - lag];
        }
        prediction[k] = next;
    }
    Ok((prediction, loaded))
}

fn solve_hermitian(m: &CMat, rhs: &CVec) -> Option<CVec> {
    let sol = m.clone().cholesky()?.solve(rhs);
    if sol.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
        Some(sol)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sample_cn_matrix, sample_cn_std};
    use crate::sensing::random_semi_unitary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line textbook Kalman filter written independently of the
    /// library code, used as a dual-implementation oracle.
    fn textbook_kf(
        h: &CVec,
        p: &CMat,
        y: &CVec,
        a_mat: &CMat,
        r_cov: &CMat,
        f_scalar: f64,
        q_cov: &CMat,
    ) -> (CVec, CMat) {
        let h_minus = h.scale(f_scalar);
        let p_minus = p.scale(f_scalar * f_scalar) + q_cov;
        let s = a_mat * &p_minus * a_mat.adjoint() + r_cov;
        let s_inv = s.try_inverse().unwrap();
        let k = &p_minus * a_mat.adjoint() * s_inv;
        let h_plus = &h_minus + &k * (y - a_mat * &h_minus);
        let n = p.nrows();
        let p_plus = (CMat::identity(n, n) - &k * a_mat) * &p_minus;
        (h_plus, p_plus)
    }

    #[test]
    fn kf_matches_textbook_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 6;
        let m = 3;
        let gamma = 0.85;
        let sigma_n2 = 0.2;
        let g = sample_cn_matrix(n, n, &mut rng);
        let q_process = crate::linalg::hermitianize(&(&g * g.adjoint())).scale(0.1)
            + CMat::identity(n, n).scale(0.01);
        let r_cov = CMat::identity(m, m).scale(sigma_n2);

        let mut state = KfState { h_hat: sample_cn_std(n, &mut rng), q: CMat::identity(n, n) };
        let mut oracle_h = state.h_hat.clone();
        let mut oracle_p = state.q.clone();
        for _ in 0..100 {
            let a = random_semi_unitary(m, n, &mut rng).unwrap();
            let y = sample_cn_std(m, &mut rng);
            let (next, loaded) = kf_step(&state, &y, &a, sigma_n2, gamma, &q_process).unwrap();
            assert!(!loaded);
            let (oh, op) =
                textbook_kf(&oracle_h, &oracle_p, &y, a.matrix(), &r_cov, gamma, &q_process);
            assert!((&next.h_hat - &oh).norm() < 1e-10);
            assert!((&next.q - crate::linalg::hermitianize(&op)).norm() < 1e-10);
            state = next;
            oracle_h = oh;
            oracle_p = op;
        }
    }

    #[test]
    fn kf_full_observation_low_noise_converges_in_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 4;
        let a = random_semi_unitary(n, n, &mut rng).unwrap();
        let h_true = sample_cn_std(n, &mut rng);
        let y = a.apply(&h_true);
        let state = KfState { h_hat: CVec::zeros(n), q: CMat::identity(n, n) };
        let q_process = CMat::identity(n, n).scale(1e-4);
        let (next, _) = kf_step(&state, &y, &a, 1e-12, 1.0, &q_process).unwrap();
        assert!((&next.h_hat - &h_true).norm() < 1e-4);
    }

    #[test]
    fn ls_semi_unitary_is_adjoint_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_semi_unitary(3, 8, &mut rng).unwrap();
        let y = sample_cn_std(3, &mut rng);
        let h = ls_estimate(&y, &a).unwrap();
        assert!((&h - a.matrix().adjoint() * &y).norm() < 1e-9);
    }

    #[test]
    fn ls_unitary_noise_free_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let a = random_semi_unitary(5, 5, &mut rng).unwrap();
        let h_true = sample_cn_std(5, &mut rng);
        let y = a.apply(&h_true);
        let h = ls_estimate(&y, &a).unwrap();
        assert!((&h - &h_true).norm() < 1e-9);
    }

    #[test]
    fn ls_beats_random_candidates_and_lies_in_row_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let a = random_semi_unitary(3, 8, &mut rng).unwrap();
        let y = sample_cn_std(3, &mut rng);
        let h = ls_estimate(&y, &a).unwrap();
        let residual = (a.apply(&h) - &y).norm();
        for _ in 0..100 {
            let alt = sample_cn_std(8, &mut rng);
            assert!(residual <= (a.apply(&alt) - &y).norm() + 1e-12);
        }
        // Projection onto null(A) is zero: h = A^H A h.
        let reproj = a.matrix().adjoint() * a.apply(&h);
        assert!((&h - reproj).norm() < 1e-10);
    }

    #[test]
    fn ar_constant_history_predicts_constant() {
        let c = Complex64::new(0.7, -0.3);
        let history: Vec<CVec> = (0..10).map(|_| CVec::from_element(2, c)).collect();
        let (pred, _) = ar_predict(&history, 1).unwrap();
        assert!((pred[0] - c).norm() < 1e-9);
        assert!((pred[1] - c).norm() < 1e-9);
    }

    #[test]
    fn ar_two_point_closed_form() {
        let z1 = Complex64::new(1.0, 0.5);
        let z2 = Complex64::new(-0.3, 0.8);
        let history = vec![CVec::from_element(1, z1), CVec::from_element(1, z2)];
        let (pred, _) = ar_predict(&history, 1).unwrap();
        let r0 = (z1.norm_sqr() + z2.norm_sqr()) / 2.0;
        let a = z2 * z1.conj() / r0;
        assert!((pred[0] - a * z2).norm() < 1e-10);
    }

    #[test]
    fn ar_recovers_known_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let gamma = 0.8;
        let mut z = Complex64::new(0.0, 0.0);
        let mut history = Vec::with_capacity(200);
        for _ in 0..200 {
            let u = sample_cn_std(1, &mut rng)[0];
            z = gamma * z + (1.0f64 - gamma * gamma).sqrt() * u;
            history.push(CVec::from_element(1, z));
        }
        let (pred, loaded) = ar_predict(&history, 1).unwrap();
        assert!(!loaded);
        let last = history[199][0];
        let a_hat = pred[0] / last;
        assert!((a_hat.re - gamma).abs() < 0.05 && a_hat.im.abs() < 0.05);
    }

    #[test]
    fn ar_zero_history_flags_and_returns_zero() {
        let history: Vec<CVec> = (0..5).map(|_| CVec::zeros(2)).collect();
        let (pred, loaded) = ar_predict(&history, 2).unwrap();
        assert!(loaded);
        assert!(pred.norm() < 1e-12);
    }

    #[test]
    fn ar_rejects_short_history() {
        let history = vec![CVec::zeros(2)];
        assert!(ar_predict(&history, 1).is_err());
    }
}
