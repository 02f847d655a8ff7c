//! Blind radio-map construction: regularized Viterbi trajectory discovery,
//! the unbiased compressive covariance estimator, the alternating build loop,
//! and the spectral error-bound diagnostic.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::radiomap::RadioMap;
use crate::scenario::{Grid, MobilityModel};
use crate::sensing::SensingMatrix;

/// Noisy external position hints, one per observation slot.
#[derive(Debug, Clone)]
pub struct CoarsePrior {
    pub positions: Vec<[f64; 2]>,
    /// Per-axis standard deviation of the hint noise, in meters.
    pub noise_std: f64,
}

impl CoarsePrior {
    /// Perturb ground-truth cell centers with isotropic Gaussian noise.
    pub fn synthesize<R: Rng + ?Sized>(
        truth: &[usize],
        grid: &Grid,
        noise_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, noise_std)
            .map_err(|e| Error::InvalidParameter(format!("bad noise std: {e}")))?;
        let mut positions = Vec::with_capacity(truth.len());
        for &cell in truth {
            let c = grid.center(cell)?;
            positions.push([c[0] + normal.sample(rng), c[1] + normal.sample(rng)]);
        }
        Ok(Self { positions, noise_std })
    }

    /// Mean distance from the hints to the true cell centers.
    pub fn mean_error(&self, truth: &[usize], grid: &Grid) -> Result<f64> {
        let mut total = 0.0;
        for (p, &cell) in self.positions.iter().zip(truth) {
            let c = grid.center(cell)?;
            total += ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
        }
        Ok(total / self.positions.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BuilderConfig {
    /// Weight of the coarse-position penalty, per meter of deviation.
    pub mu: f64,
    /// Convergence threshold on the mean decoded-position change, meters.
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self { mu: 0.05, epsilon: 0.5, max_iters: 10 }
    }
}

/// Terms of the spectral reconstruction-error bound, up to the universal
/// constant the bound leaves unspecified.
#[derive(Debug, Clone, Copy)]
pub struct BoundTerms {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    /// ||C||_2 / sqrt(n) * (S1 + S2 + S3).
    pub rhs: f64,
}

/// Raw (unprojected) covariance estimate for one cell.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub c_raw: CMat,
    pub n_samples: usize,
    pub bound: Option<BoundTerms>,
}

/// Result of the alternating map-construction loop.
#[derive(Debug)]
pub struct BuildResult {
    pub map: RadioMap,
    pub trajectory: Vec<usize>,
    /// Mean decoded-position change per iteration, meters; the first entry
    /// compares iterations 1 and 2.
    pub position_changes: Vec<f64>,
    pub converged: bool,
}

/// MAP cell sequence maximizing
/// sum_t [log p(y_t | p_t) - mu ||p_t - coarse_t||] + sum_t log P(p_t | p_{t-1})
/// under a uniform initial prior. `map_iterate = None` corresponds to the
/// all-identity first iterate, where the emission term is constant across
/// cells and therefore skipped. Ties break toward the lowest cell index.
pub fn viterbi_decode(
    observations: &[CVec],
    sensing: &[SensingMatrix],
    map_iterate: Option<&RadioMap>,
    grid: &Grid,
    mobility: &MobilityModel,
    coarse: &CoarsePrior,
    mu: f64,
    sigma_n2: f64,
) -> Result<Vec<usize>> {
    let t_len = observations.len();
    if t_len == 0 || sensing.len() != t_len || coarse.positions.len() != t_len {
        return Err(Error::InvalidParameter(
            "observations, sensing, and coarse prior must share one length".into(),
        ));
    }
    let n = grid.n_cells();
    let centers: Vec<[f64; 2]> = (0..n).map(|c| grid.center(c).unwrap()).collect();
    let reachable: Vec<Vec<(usize, f64)>> =
        (0..n).map(|c| mobility.reachable(grid, c)).collect::<Result<_>>()?;

    // With one sensing matrix shared by every slot the per-cell likelihood
    // factorizations are time-invariant and can be computed once.
    let constant_sensing =
        sensing.windows(2).all(|w| w[0].matrix() == w[1].matrix());
    let shared_factors: Option<Vec<(CMat, f64)>> = match (map_iterate, constant_sensing) {
        (Some(map), true) => {
            let m = sensing[0].n_pilots();
            let noise = CMat::identity(m, m).scale(sigma_n2);
            Some(
                (0..n)
                    .map(|cell| {
                        let sigma = sensing[0].project_covariance(map.lookup(cell)?) + &noise;
                        linalg::hermitian_inverse_logdet(&sigma)
                    })
                    .collect::<Result<_>>()?,
            )
        }
        _ => None,
    };

    let local_score = |t: usize, cell: usize| -> Result<f64> {
        let c = &centers[cell];
        let p = &coarse.positions[t];
        let mut s = -mu * ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt();
        if let Some(factors) = &shared_factors {
            let (inv, logdet) = &factors[cell];
            let y = &observations[t];
            let quad = (y.adjoint() * inv * y)[(0, 0)].re;
            s += -quad - logdet;
        } else if let Some(map) = map_iterate {
            let m = sensing[t].n_pilots();
            let sigma = sensing[t].project_covariance(map.lookup(cell)?)
                + CMat::identity(m, m).scale(sigma_n2);
            s += linalg::cn_logpdf_unnormalized(&observations[t], &sigma)?;
        }
        Ok(s)
    };

    let mut score = Vec::with_capacity(n);
    for cell in 0..n {
        score.push(local_score(0, cell)?);
    }
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(t_len);
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        for from in 0..n {
            if !score[from].is_finite() {
                continue;
            }
            for &(to, p) in &reachable[from] {
                let s = score[from] + p.ln();
                // Strict comparison with ascending `from` keeps the lowest
                // predecessor index on ties.
                if s > next[to] {
                    next[to] = s;
                    prev[to] = from;
                }
            }
        }
        if next.iter().all(|s| !s.is_finite()) {
            return Err(Error::ZeroSupport { step: t });
        }
        for cell in 0..n {
            if next[cell].is_finite() {
                next[cell] += local_score(t, cell)?;
            }
        }
        score = next;
        back.push(prev);
    }

    let mut best = 0;
    for (cell, &s) in score.iter().enumerate() {
        if s > score[best] {
            best = cell;
        }
    }
    if !score[best].is_finite() {
        return Err(Error::ZeroSupport { step: t_len - 1 });
    }
    let mut path = vec![best; t_len];
    for t in (1..t_len).rev() {
        path[t - 1] = back[t - 1][path[t]];
    }
    Ok(path)
}

/// Unbiased covariance estimate from compressed observations of one cell:
/// phi_t = A_t^H y_t, Omega_y = (N_t^2 / M^2) mean(phi phi^H),
/// Omega_A = mean(A_t^H A_t), then a closed-form de-biasing. The de-biasing
/// constants come from the second moments of Haar-random rank-M projections
/// of circularly-symmetric complex vectors,
/// E{P h h^H P} = [M(M N - 1) h h^H + M(N - M) ||h||^2 I] / (N (N^2 - 1)),
/// so N_bar = N_t^2 - 1 and the common denominator is M N_t - 1; for
/// M = N_t the estimator reduces to mean(phi phi^H) - sigma_n^2 I. The raw
/// estimate is Hermitian but generally indefinite; project before use as a
/// map entry.
pub fn unbiased_covariance(
    observations: &[CVec],
    sensing: &[SensingMatrix],
    sigma_n2: f64,
) -> Result<CovarianceEstimate> {
    if observations.is_empty() || observations.len() != sensing.len() {
        return Err(Error::NoSamples);
    }
    let n_t = sensing[0].n_antennas();
    let m = sensing[0].n_pilots();
    if n_t < 2 {
        return Err(Error::InvalidParameter("need at least 2 antennas".into()));
    }
    let count = observations.len();
    let mut omega_y = CMat::zeros(n_t, n_t);
    let mut omega_a = CMat::zeros(n_t, n_t);
    for (y, a) in observations.iter().zip(sensing) {
        if a.n_pilots() != m || a.n_antennas() != n_t {
            return Err(Error::DimensionMismatch { expected: m, got: a.n_pilots() });
        }
        let phi = a.matrix().adjoint() * y;
        omega_y += &phi * phi.adjoint();
        omega_a += a.matrix().adjoint() * a.matrix();
    }
    let nf = n_t as f64;
    let mf = m as f64;
    omega_y *= Complex64::new(nf * nf / (mf * mf) / count as f64, 0.0);
    omega_a /= Complex64::new(count as f64, 0.0);

    let n_bar = nf * nf - 1.0;
    let denom = mf * nf - 1.0;
    let eye = CMat::identity(n_t, n_t);
    let signal = (omega_y.scale(n_bar) - eye.scale((nf - mf) * omega_y.trace().re))
        .scale(mf / (nf * denom));
    // Noise correction that exactly cancels the conditional expectation of
    // the noise contribution for any fixed semi-unitary sensing matrices;
    // for M = N_t it reduces to subtracting sigma_n^2 I.
    let noise = (omega_a.scale(nf * n_bar) - eye.scale(nf * (nf - mf) * omega_a.trace().re))
        .scale(sigma_n2 / (mf * denom));
    let c_raw = linalg::hermitianize(&(signal - noise));
    Ok(CovarianceEstimate { c_raw, n_samples: count, bound: None })
}

/// Terms of the high-probability spectral error bound for a cell with
/// `n_samples` observations, true rank at most `rank`, and failure
/// probability `zeta`. The unknown universal constant is excluded.
pub fn bound_diagnostic(
    c_est: &CMat,
    rank: usize,
    n_t: usize,
    m: usize,
    n_samples: usize,
    zeta: f64,
) -> Result<BoundTerms> {
    if !(0.0..1.0).contains(&zeta) || zeta == 0.0 {
        return Err(Error::BoundPrecondition("zeta must lie in (0, 1)".into()));
    }
    if n_t < 2 {
        return Err(Error::BoundPrecondition("need at least 2 antennas".into()));
    }
    let nf = n_t as f64;
    let tf = n_samples as f64;
    if tf < nf * (1.0 / zeta).ln() {
        return Err(Error::BoundPrecondition(format!(
            "need at least {} samples for zeta = {zeta}",
            (nf * (1.0 / zeta).ln()).ceil()
        )));
    }
    let rf = rank as f64;
    let mf = m as f64;
    let log_term = (tf * nf / zeta).ln();
    let s1 = (nf * rf * rf * log_term * log_term).sqrt() / mf;
    let s2 = (rf * (1.0 / zeta).ln()).sqrt();
    let s3 = nf * rf * log_term * log_term / (tf.sqrt() * mf);
    let rhs = linalg::spectral_norm_hermitian(c_est) / tf.sqrt() * (s1 + s2 + s3);
    Ok(BoundTerms { s1, s2, s3, rhs })
}

/// Mean distance between decoded cells and the true cells, in meters.
pub fn mean_localization_error(decoded: &[usize], truth: &[usize], grid: &Grid) -> Result<f64> {
    if decoded.len() != truth.len() || decoded.is_empty() {
        return Err(Error::InvalidParameter("length mismatch in error computation".into()));
    }
    let mut total = 0.0;
    for (&d, &t) in decoded.iter().zip(truth) {
        total += grid.distance(d, t)?;
    }
    Ok(total / decoded.len() as f64)
}

/// Alternating map construction: decode a trajectory against the current map
/// iterate, thin per-cell samples to one per ceil(1/(1-gamma)) consecutive
/// slots, re-estimate every visited cell, and repeat until the mean decoded
/// position change drops below epsilon. Unvisited cells fall back to the
/// identity covariance. `init` overrides the all-identity first iterate.
#[allow(clippy::too_many_arguments)]
pub fn build_map(
    observations: &[CVec],
    sensing: &[SensingMatrix],
    coarse: &CoarsePrior,
    grid: &Grid,
    mobility: &MobilityModel,
    gamma: f64,
    sigma_n2: f64,
    config: &BuilderConfig,
    init: Option<&RadioMap>,
) -> Result<BuildResult> {
    if observations.is_empty() {
        return Err(Error::NoSamples);
    }
    let n_t = sensing[0].n_antennas();
    let stride = if gamma < 1.0 {
        ((1.0 / (1.0 - gamma)).ceil() as usize).max(1)
    } else {
        usize::MAX
    };

    let mut current_map: Option<RadioMap> = init.cloned();
    let mut previous_path: Option<Vec<usize>> = None;
    let mut position_changes = Vec::new();
    let mut converged = false;

    for _ in 0..config.max_iters.max(1) {
        let path = viterbi_decode(
            observations,
            sensing,
            current_map.as_ref(),
            grid,
            mobility,
            coarse,
            config.mu,
            sigma_n2,
        )?;

        if let Some(prev) = &previous_path {
            let change = mean_localization_error(&path, prev, grid)?;
            position_changes.push(change);
            if change < config.epsilon {
                converged = true;
                previous_path = Some(path);
                break;
            }
        }

        // Assign slots to cells, thinning for sample independence.
        let mut cell_slots: Vec<Vec<usize>> = vec![Vec::new(); grid.n_cells()];
        let mut last_kept: Vec<Option<usize>> = vec![None; grid.n_cells()];
        for (t, &cell) in path.iter().enumerate() {
            let keep = match last_kept[cell] {
                None => true,
                Some(prev_t) => t - prev_t >= stride,
            };
            if keep {
                cell_slots[cell].push(t);
                last_kept[cell] = Some(t);
            }
        }

        let mut covariances = Vec::with_capacity(grid.n_cells());
        let mut counts = Vec::with_capacity(grid.n_cells());
        for slots in &cell_slots {
            if slots.is_empty() {
                covariances.push(CMat::identity(n_t, n_t));
                counts.push(0);
                continue;
            }
            let ys: Vec<CVec> = slots.iter().map(|&t| observations[t].clone()).collect();
            let mats: Vec<SensingMatrix> = slots.iter().map(|&t| sensing[t].clone()).collect();
            let est = unbiased_covariance(&ys, &mats, sigma_n2)?;
            covariances.push(linalg::psd_project(&est.c_raw));
            counts.push(slots.len() as u64);
        }
        current_map =
            Some(RadioMap::new(grid.clone(), n_t, covariances, counts)?);
        previous_path = Some(path);
    }

    Ok(BuildResult {
        map: current_map.expect("at least one iteration ran"),
        trajectory: previous_path.expect("at least one iteration ran"),
        position_changes,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sample_cn, sample_cn_matrix, sample_cn_std};
    use crate::scenario::{
        observe, steering_vector, ChannelParams, Grid, MobilityModel, PathSpec, Scenario,
        ScattererLayout,
    };
    use crate::sensing::random_semi_unitary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// 2x2 grid whose four cells are all mutually reachable.
    fn open_grid() -> (Grid, MobilityModel) {
        let grid = Grid::new([0.0, 0.0], 5.0, 2, 2).unwrap();
        let mobility = MobilityModel::new([0.0, 0.0], 40.0, 0.5).unwrap();
        (grid, mobility)
    }

    fn random_map(grid: &Grid, n_t: usize, rng: &mut ChaCha8Rng) -> RadioMap {
        let covs: Vec<CMat> = (0..grid.n_cells())
            .map(|_| {
                let g = sample_cn_matrix(n_t, n_t, rng);
                crate::linalg::hermitianize(&(&g * g.adjoint()))
                    + CMat::identity(n_t, n_t).scale(0.1)
            })
            .collect();
        RadioMap::new(grid.clone(), n_t, covs, vec![0; grid.n_cells()]).unwrap()
    }

    /// Exhaustive search over all |X|^T paths with the same scoring terms.
    fn brute_force(
        observations: &[CVec],
        sensing: &[SensingMatrix],
        map: Option<&RadioMap>,
        grid: &Grid,
        mobility: &MobilityModel,
        coarse: &CoarsePrior,
        mu: f64,
        sigma_n2: f64,
    ) -> Vec<usize> {
        let n = grid.n_cells();
        let t_len = observations.len();
        let local = |t: usize, cell: usize| -> f64 {
            let c = grid.center(cell).unwrap();
            let p = coarse.positions[t];
            let mut s = -mu * ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt();
            if let Some(m) = map {
                let mp = sensing[t].n_pilots();
                let sigma = sensing[t].project_covariance(m.lookup(cell).unwrap())
                    + CMat::identity(mp, mp).scale(sigma_n2);
                s += crate::linalg::cn_logpdf_unnormalized(&observations[t], &sigma).unwrap();
            }
            s
        };
        let mut best_path = Vec::new();
        let mut best_score = f64::NEG_INFINITY;
        let total = n.pow(t_len as u32);
        for code in 0..total {
            let mut path = Vec::with_capacity(t_len);
            let mut c = code;
            for _ in 0..t_len {
                path.push(c % n);
                c /= n;
            }
            let mut s = local(0, path[0]);
            let mut valid = true;
            for t in 1..t_len {
                let p = mobility.transition_probability(grid, path[t - 1], path[t]).unwrap();
                if p == 0.0 {
                    valid = false;
                    break;
                }
                s += p.ln() + local(t, path[t]);
            }
            if valid && s > best_score {
                best_score = s;
                best_path = path;
            }
        }
        best_path
    }

    #[test]
    fn viterbi_matches_exhaustive_search() {
        let (grid, mobility) = open_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n_t = 3;
        let sigma_n2 = 0.1;
        for trial in 0..5 {
            let map = random_map(&grid, n_t, &mut rng);
            let t_len = 5;
            let sensing: Vec<SensingMatrix> =
                (0..t_len).map(|_| random_semi_unitary(2, n_t, &mut rng).unwrap()).collect();
            let observations: Vec<CVec> =
                (0..t_len).map(|_| sample_cn_std(2, &mut rng)).collect();
            let coarse = CoarsePrior {
                positions: (0..t_len)
                    .map(|_| {
                        [10.0 * rand::Rng::gen::<f64>(&mut rng), 10.0 * rand::Rng::gen::<f64>(&mut rng)]
                    })
                    .collect(),
                noise_std: 5.0,
            };
            for &mu in &[0.0, 0.1, 10.0] {
                let got = viterbi_decode(
                    &observations, &sensing, Some(&map), &grid, &mobility, &coarse, mu, sigma_n2,
                )
                .unwrap();
                let want = brute_force(
                    &observations, &sensing, Some(&map), &grid, &mobility, &coarse, mu, sigma_n2,
                );
                assert_eq!(got, want, "trial {trial} mu {mu}");
            }
        }
    }

    #[test]
    fn viterbi_huge_mu_snaps_to_coarse_positions() {
        let (grid, mobility) = open_grid();
        let coarse = CoarsePrior {
            positions: vec![[2.0, 2.0], [7.0, 2.0], [7.0, 7.0], [2.0, 7.0]],
            noise_std: 1.0,
        };
        let sensing: Vec<SensingMatrix> = (0..4)
            .map(|_| {
                random_semi_unitary(1, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
            })
            .collect();
        let observations: Vec<CVec> = (0..4).map(|_| CVec::zeros(1)).collect();
        let path = viterbi_decode(
            &observations, &sensing, None, &grid, &mobility, &coarse, 1e6, 0.1,
        )
        .unwrap();
        let expected: Vec<usize> =
            coarse.positions.iter().map(|&p| grid.nearest_cell(p)).collect();
        assert_eq!(path, expected);
    }

    #[test]
    fn viterbi_zero_mu_uniform_emissions_maximizes_prior() {
        let grid = Grid::new([0.0, 0.0], 5.0, 1, 4).unwrap();
        // Drift right by one cell per slot.
        let mobility = MobilityModel::new([10.0, 0.0], 12.0, 0.5).unwrap();
        let coarse =
            CoarsePrior { positions: vec![[0.0, 0.0]; 4], noise_std: 1.0 };
        let sensing: Vec<SensingMatrix> = (0..4)
            .map(|_| random_semi_unitary(1, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap())
            .collect();
        let observations: Vec<CVec> = (0..4).map(|_| CVec::zeros(1)).collect();
        let got =
            viterbi_decode(&observations, &sensing, None, &grid, &mobility, &coarse, 0.0, 0.1)
                .unwrap();
        let want =
            brute_force(&observations, &sensing, None, &grid, &mobility, &coarse, 0.0, 0.1);
        assert_eq!(got, want);
    }

    #[test]
    fn estimator_reduces_to_sample_covariance_when_uncompressed() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n_t = 4;
        let eye = SensingMatrix::new(CMat::identity(n_t, n_t)).unwrap();
        let observations: Vec<CVec> =
            (0..50).map(|_| sample_cn_std(n_t, &mut rng)).collect();
        let sensing = vec![eye; 50];

        let mut sample_cov = CMat::zeros(n_t, n_t);
        for y in &observations {
            sample_cov += y * y.adjoint();
        }
        sample_cov /= Complex64::new(50.0, 0.0);

        let est = unbiased_covariance(&observations, &sensing, 0.0).unwrap();
        assert!((&est.c_raw - &sample_cov).norm() < 1e-10);

        let sigma_n2 = 0.3;
        let est = unbiased_covariance(&observations, &sensing, sigma_n2).unwrap();
        let want = &sample_cov - CMat::identity(n_t, n_t).scale(sigma_n2);
        assert!((&est.c_raw - want).norm() < 1e-10);
    }

    #[test]
    fn estimator_is_unbiased_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let n_t = 4;
        let m = 2;
        let sigma_n2: f64 = 0.2;
        // Rank-2 ground truth.
        let a1 = steering_vector(0.4, n_t);
        let a2 = steering_vector(-0.7, n_t);
        let c = (&a1 * a1.adjoint()).scale(1.0) + (&a2 * a2.adjoint()).scale(0.5);
        let draws = 20_000;
        let mut acc = CMat::zeros(n_t, n_t);
        let mut batch_y = Vec::with_capacity(draws);
        let mut batch_a = Vec::with_capacity(draws);
        for _ in 0..draws {
            let h = sample_cn(&c, &mut rng).unwrap();
            let a = random_semi_unitary(m, n_t, &mut rng).unwrap();
            let noise = sample_cn_std(m, &mut rng).scale(sigma_n2.sqrt());
            batch_y.push(a.apply(&h) + noise);
            batch_a.push(a);
        }
        // Per-sample estimates averaged: linearity makes this the same mean
        // as one big batch, and it exercises |T| = 1.
        for (y, a) in batch_y.iter().zip(&batch_a) {
            let est = unbiased_covariance(
                std::slice::from_ref(y),
                std::slice::from_ref(a),
                sigma_n2,
            )
            .unwrap();
            acc += est.c_raw;
        }
        acc /= Complex64::new(draws as f64, 0.0);
        let rel = crate::linalg::spectral_norm_hermitian(&(&acc - &c))
            / crate::linalg::spectral_norm_hermitian(&c);
        assert!(rel < 0.1, "relative bias {rel}");
    }

    #[test]
    fn noise_correction_cancels_pure_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let n_t = 4;
        let m = 2;
        let sigma_n2: f64 = 0.5;
        let draws = 20_000;
        let mut acc = CMat::zeros(n_t, n_t);
        for _ in 0..draws {
            // h = 0: observations are pure noise.
            let a = random_semi_unitary(m, n_t, &mut rng).unwrap();
            let y = sample_cn_std(m, &mut rng).scale(sigma_n2.sqrt());
            let est = unbiased_covariance(&[y], &[a], sigma_n2).unwrap();
            acc += est.c_raw;
        }
        acc /= Complex64::new(draws as f64, 0.0);
        assert!(crate::linalg::spectral_norm_hermitian(&acc) < 0.05 * sigma_n2);
    }

    #[test]
    fn bound_terms_arithmetic() {
        let c = CMat::identity(4, 4);
        let b = bound_diagnostic(&c, 1, 4, 2, 100, 0.1).unwrap();
        assert!((b.s2 - 10f64.ln().sqrt()).abs() < 1e-12);

        // R doubled: S2 scales by sqrt(2), S3 by 2.
        let b2 = bound_diagnostic(&c, 2, 4, 2, 100, 0.1).unwrap();
        assert!((b2.s2 - 2f64.sqrt() * b.s2).abs() < 1e-12);
        assert!((b2.s3 - 2.0 * b.s3).abs() < 1e-12);

        // M doubled: S1 and S3 halve.
        let b4 = bound_diagnostic(&c, 1, 4, 4, 100, 0.1).unwrap();
        assert!((b4.s1 - 0.5 * b.s1).abs() < 1e-12);
        assert!((b4.s3 - 0.5 * b.s3).abs() < 1e-12);

        // Too few samples for the requested confidence.
        assert!(bound_diagnostic(&c, 1, 4, 2, 3, 0.1).is_err());
    }

    fn four_cell_scenario() -> Scenario {
        let grid = Grid::new([0.0, 0.0], 5.0, 1, 4).unwrap();
        let mobility = MobilityModel::new([0.0, 0.0], 12.0, 0.5).unwrap();
        let angles = [-1.0, -0.3, 0.3, 1.0];
        let layout = ScattererLayout {
            paths: angles.iter().map(|&a| vec![PathSpec { power: 1.0, angle: a }]).collect(),
            sigma_h2: 1e-3,
            los: vec![true; 4],
        };
        let params =
            ChannelParams { n_antennas: 4, ar_coefficient: 0.5, noise_variance: 1e-3 };
        Scenario::new(grid, mobility, layout, params).unwrap()
    }

    #[test]
    fn build_map_with_true_init_recovers_trajectory_immediately() {
        let sc = four_cell_scenario();
        let true_map = RadioMap::from_true_covariances(&sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let traj = sc.simulate(40, &mut rng).unwrap();
        let sensing: Vec<SensingMatrix> =
            (0..40).map(|_| random_semi_unitary(4, 4, &mut rng).unwrap()).collect();
        let observations: Vec<CVec> = (0..40)
            .map(|t| observe(&traj.channels[t], &sensing[t], 1e-3, &mut rng).unwrap())
            .collect();
        let coarse =
            CoarsePrior::synthesize(&traj.positions, &sc.grid, 10.0, &mut rng).unwrap();
        let config = BuilderConfig { mu: 0.0, epsilon: 0.5, max_iters: 5 };
        let result = build_map(
            &observations,
            &sensing,
            &coarse,
            &sc.grid,
            &sc.mobility,
            sc.params.ar_coefficient,
            1e-3,
            &config,
            Some(&true_map),
        )
        .unwrap();
        assert!(result.converged);
        assert!(result.position_changes.len() <= 2);
        assert_eq!(result.trajectory, traj.positions);
    }

    #[test]
    fn build_map_improves_on_coarse_prior() {
        let sc = four_cell_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let t_len = 120;
        let traj = sc.simulate(t_len, &mut rng).unwrap();
        let sensing: Vec<SensingMatrix> =
            (0..t_len).map(|_| random_semi_unitary(4, 4, &mut rng).unwrap()).collect();
        let observations: Vec<CVec> = (0..t_len)
            .map(|t| observe(&traj.channels[t], &sensing[t], 1e-3, &mut rng).unwrap())
            .collect();
        let coarse =
            CoarsePrior::synthesize(&traj.positions, &sc.grid, 8.0, &mut rng).unwrap();
        let config = BuilderConfig { mu: 0.05, epsilon: 0.5, max_iters: 8 };
        let result = build_map(
            &observations,
            &sensing,
            &coarse,
            &sc.grid,
            &sc.mobility,
            sc.params.ar_coefficient,
            1e-3,
            &config,
            None,
        )
        .unwrap();
        let coarse_err = coarse.mean_error(&traj.positions, &sc.grid).unwrap();
        let final_err =
            mean_localization_error(&result.trajectory, &traj.positions, &sc.grid).unwrap();
        assert!(
            final_err < coarse_err,
            "final {final_err:.2} m vs coarse {coarse_err:.2} m"
        );
        assert!(result.position_changes.iter().all(|c| c.is_finite()));
    }
}
