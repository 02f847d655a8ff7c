//! Radio-map-embedded switching Kalman filter: position posterior,
//! covariance-switched prediction, Kalman update, MAP position tracking, and
//! the per-slot step that composes them, with optional multi-BS fusion.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::radiomap::RadioMap;
use crate::scenario::MobilityModel;
use crate::sensing::{self, SensingMatrix};

#[derive(Debug, Clone, Copy)]
pub struct TrackerConfig {
    pub gamma: f64,
    pub sigma_n2: f64,
    /// Base regularization for position likelihoods, normally the scenario's
    /// diffuse scatter power sigma_h^2.
    pub sigma_h2: f64,
    /// Pilots per slot when the tracker designs its own sensing matrices.
    pub n_pilots: usize,
}

/// Per-BS filter variables.
#[derive(Debug, Clone)]
pub struct BsFilter {
    pub h_hat: CVec,
    pub q: CMat,
}

/// Full tracker state at time t.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub filters: Vec<BsFilter>,
    pub p_hat: usize,
    pub pi: Vec<f64>,
    pub t: usize,
}

/// How the sensing matrix for the next slot is chosen.
pub enum StepSensing<'a> {
    Random,
    Adaptive,
    /// Externally supplied, one matrix per BS.
    Fixed(&'a [SensingMatrix]),
}

/// Output of one tracker step.
pub struct StepOutput {
    pub state: TrackerState,
    /// The sensing matrices actually used, one per BS.
    pub sensing: Vec<SensingMatrix>,
    /// Numerical fallbacks taken during the step, empty in the common case.
    pub flags: Vec<String>,
}

/// The switching Kalman filter bound to its radio maps and mobility model.
pub struct Tracker<'a> {
    maps: Vec<&'a RadioMap>,
    mobility: &'a MobilityModel,
    cfg: TrackerConfig,
    /// Per map, per cell: ((C + eps I)^{-1}, log|C + eps I|) for the position
    /// likelihood of the MAP position track.
    position_cache: Vec<Vec<(CMat, f64)>>,
}

impl<'a> Tracker<'a> {
    pub fn new(
        maps: Vec<&'a RadioMap>,
        mobility: &'a MobilityModel,
        cfg: TrackerConfig,
    ) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidParameter("need at least one radio map".into()));
        }
        let grid = maps[0].grid();
        for m in &maps {
            if m.grid() != grid {
                return Err(Error::InvalidParameter("radio maps must share one grid".into()));
            }
        }
        if !(0.0..=1.0).contains(&cfg.gamma) || cfg.sigma_n2 <= 0.0 {
            return Err(Error::InvalidParameter("invalid tracker config".into()));
        }
        if cfg.n_pilots == 0 || cfg.n_pilots > maps[0].n_antennas() {
            return Err(Error::InvalidParameter("n_pilots must be in 1..=n_antennas".into()));
        }
        let mut position_cache = Vec::with_capacity(maps.len());
        for m in &maps {
            let mut per_cell = Vec::with_capacity(grid.n_cells());
            for cell in 0..grid.n_cells() {
                let c = m.lookup(cell)?;
                let n = c.nrows();
                let eps = cfg.sigma_h2.max(1e-6 * c.trace().re / n as f64);
                let reg = c + CMat::identity(n, n).scale(eps);
                per_cell.push(linalg::hermitian_inverse_logdet(&reg)?);
            }
            position_cache.push(per_cell);
        }
        Ok(Self { maps, mobility, cfg, position_cache })
    }

    pub fn n_bs(&self) -> usize {
        self.maps.len()
    }

    pub fn config(&self) -> TrackerConfig {
        self.cfg
    }

    fn n_cells(&self) -> usize {
        self.maps[0].grid().n_cells()
    }

    fn n_antennas(&self) -> usize {
        self.maps[0].n_antennas()
    }

    /// Observation-informed position posterior for one BS: pi(x) proportional to
    /// p(y|x) P(x|prev), evaluated in the log domain over the reachable set.
    /// On numerical underflow the transition prior is returned and flagged.
    pub fn position_posterior(
        &self,
        bs: usize,
        y: &CVec,
        a: &SensingMatrix,
        prev_cell: usize,
    ) -> Result<(Vec<f64>, bool)> {
        let grid = self.maps[bs].grid();
        let reachable = self.mobility.reachable(grid, prev_cell)?;
        let m = a.n_pilots();
        let noise = CMat::identity(m, m).scale(self.cfg.sigma_n2);
        let mut scores = Vec::with_capacity(reachable.len());
        for &(cell, p) in &reachable {
            let sigma = a.project_covariance(self.maps[bs].lookup(cell)?) + &noise;
            let ll = linalg::cn_logpdf_unnormalized(y, &sigma)?;
            scores.push(ll + p.ln());
        }
        Ok(normalize_log_scores(&reachable, &scores, self.n_cells()))
    }

    /// Covariance-switched prediction: h_pred = gamma h, and
    /// Q_pred = gamma^2 Q + (1 - gamma^2) sum_x w(x) C(x).
    pub fn predict(&self, bs: usize, filter: &BsFilter, weights: &[f64]) -> Result<(CVec, CMat)> {
        let gamma = self.cfg.gamma;
        let n = self.n_antennas();
        let mut mix = CMat::zeros(n, n);
        for (cell, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                mix += self.maps[bs].lookup(cell)?.scale(w);
            }
        }
        let h_pred = filter.h_hat.scale(gamma);
        let q_pred = filter.q.scale(gamma * gamma) + mix.scale(1.0 - gamma * gamma);
        Ok((h_pred, linalg::hermitianize(&q_pred)))
    }

    /// Standard Kalman update. A singular innovation
    /// matrix is diagonal-loaded and flagged.
    pub fn kalman_update(
        &self,
        h_pred: &CVec,
        q_pred: &CMat,
        y: &CVec,
        a: &SensingMatrix,
    ) -> Result<(CVec, CMat, bool)> {
        kalman_update(h_pred, q_pred, y, a, self.cfg.sigma_n2)
    }

    /// MAP position track with multi-BS fusion: per-BS posteriors
    /// over the reachable set are multiplied elementwise and renormalized;
    /// ties break toward the lowest cell index.
    pub fn track_position(
        &self,
        deltas: &[CVec],
        prev_cell: usize,
    ) -> Result<(usize, Vec<f64>)> {
        let grid = self.maps[0].grid();
        let reachable = self.mobility.reachable(grid, prev_cell)?;
        if reachable.is_empty() {
            return Err(Error::EmptyTransitionSupport { from: prev_cell });
        }
        let gamma = self.cfg.gamma;
        let scale = 1.0 - gamma * gamma;
        let n = self.n_antennas() as f64;
        let mut scores = Vec::with_capacity(reachable.len());
        for &(cell, p) in &reachable {
            // Product of per-BS posteriors: each contributes likelihood and
            // the shared transition prior.
            let mut s = self.maps.len() as f64 * p.ln();
            if scale > 1e-12 {
                for (bs, delta) in deltas.iter().enumerate() {
                    let (inv, logdet) = &self.position_cache[bs][cell];
                    let quad = (delta.adjoint() * inv * delta)[(0, 0)].re / scale;
                    s += -quad - logdet - n * scale.ln();
                }
            }
            scores.push(s);
        }
        let (pi, _) = normalize_log_scores(&reachable, &scores, self.n_cells());
        let best = argmax_lowest_index(&pi);
        Ok((best, pi))
    }

    /// Algorithm step 1: observe y_1 through a_1, form pi_1 from the uniform
    /// prior, draw h_1 from CN(0, C(p_1)) and set Q_1 to the pi_1-weighted
    /// covariance mixture.
    pub fn init<R: Rng + ?Sized>(
        &self,
        y1: &[CVec],
        a1: &[SensingMatrix],
        rng: &mut R,
    ) -> Result<TrackerState> {
        let n_cells = self.n_cells();
        let m0 = a1[0].n_pilots();
        let noise = CMat::identity(m0, m0).scale(self.cfg.sigma_n2);
        // pi_1(x) proportional to prod_q p(y_1^q | x) under a uniform prior.
        let all: Vec<(usize, f64)> =
            (0..n_cells).map(|c| (c, 1.0 / n_cells as f64)).collect();
        let mut scores = vec![0.0; n_cells];
        for (bs, (y, a)) in y1.iter().zip(a1).enumerate() {
            let m = a.n_pilots();
            let noise_bs = if m == m0 {
                noise.clone()
            } else {
                CMat::identity(m, m).scale(self.cfg.sigma_n2)
            };
            for cell in 0..n_cells {
                let sigma = a.project_covariance(self.maps[bs].lookup(cell)?) + &noise_bs;
                scores[cell] += linalg::cn_logpdf_unnormalized(y, &sigma)?;
            }
        }
        let log_prior = (1.0 / n_cells as f64).ln();
        for s in &mut scores {
            *s += log_prior;
        }
        let (pi, _) = normalize_log_scores(&all, &scores, n_cells);
        let p_hat = argmax_lowest_index(&pi);
        let gamma = self.cfg.gamma;
        let mut filters = Vec::with_capacity(self.maps.len());
        for bs in 0..self.maps.len() {
            let h_hat = linalg::sample_cn(self.maps[bs].lookup(p_hat)?, rng)?;
            let n = self.n_antennas();
            let mut mix = CMat::zeros(n, n);
            for (cell, &w) in pi.iter().enumerate() {
                if w > 0.0 {
                    mix += self.maps[bs].lookup(cell)?.scale(w);
                }
            }
            filters.push(BsFilter { h_hat, q: mix.scale(1.0 - gamma * gamma) });
        }
        Ok(TrackerState { filters, p_hat, pi, t: 1 })
    }

    /// One slot of the switching Kalman filter:
    /// prior prediction, sensing design, posterior refinement of Q, Kalman
    /// update, and the MAP position track.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &TrackerState,
        sensing: StepSensing<'_>,
        sense: &mut dyn FnMut(usize, &SensingMatrix) -> Result<CVec>,
        rng: &mut R,
    ) -> Result<StepOutput> {
        let grid = self.maps[0].grid();
        let prior_row = self.mobility.transition_row(grid, state.p_hat)?;
        let mut flags = Vec::new();
        let mut used = Vec::with_capacity(self.maps.len());
        let mut filters = Vec::with_capacity(self.maps.len());
        let mut deltas = Vec::with_capacity(self.maps.len());
        let mut combined_log_pi = vec![0.0f64; self.n_cells()];
        let mut support = vec![true; self.n_cells()];

        for (bs, filter) in state.filters.iter().enumerate() {
            // 2a: predict with the transition prior, before observing y_t.
            let (h_pred, q_prior) = self.predict(bs, filter, &prior_row)?;
            // 2b: design the sensing matrix and observe.
            let a = match &sensing {
                StepSensing::Random => {
                    sensing::random_semi_unitary(self.cfg.n_pilots, self.n_antennas(), rng)?
                }
                StepSensing::Adaptive => {
                    sensing::adaptive_sensing(&q_prior, self.cfg.n_pilots, rng)?
                }
                StepSensing::Fixed(mats) => mats[bs].clone(),
            };
            let y = sense(bs, &a)?;
            // 2c: refine Q_pred with the observation-informed posterior.
            let (pi_bs, fell_back) = self.position_posterior(bs, &y, &a, state.p_hat)?;
            if fell_back {
                flags.push(format!("position posterior underflow at t={} bs={bs}", state.t + 1));
            }
            let (_, q_pred) = self.predict(bs, filter, &pi_bs)?;
            // 2d: Kalman update.
            let (h_hat, q, loaded) = self.kalman_update(&h_pred, &q_pred, &y, &a)?;
            if loaded {
                flags.push(format!("innovation diagonal-loaded at t={} bs={bs}", state.t + 1));
            }
            deltas.push(&h_hat - filter.h_hat.scale(self.cfg.gamma));
            filters.push(BsFilter { h_hat, q });
            for cell in 0..self.n_cells() {
                if pi_bs[cell] > 0.0 {
                    combined_log_pi[cell] += pi_bs[cell].ln();
                } else {
                    support[cell] = false;
                }
            }
            used.push(a);
        }

        // 2e: MAP position from the fused per-BS posteriors.
        let (p_hat, _) = self.track_position(&deltas, state.p_hat)?;

        let reachable: Vec<(usize, f64)> = support
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s)
            .map(|(c, _)| (c, 1.0))
            .collect();
        let scores: Vec<f64> = reachable.iter().map(|&(c, _)| combined_log_pi[c]).collect();
        let (pi, _) = normalize_log_scores(&reachable, &scores, self.n_cells());

        Ok(StepOutput {
            state: TrackerState { filters, p_hat, pi, t: state.t + 1 },
            sensing: used,
            flags,
        })
    }
}

/// Kalman update with gain K = Q A^H (A Q A^H + sigma_n^2 I)^{-1}. Returns
/// the updated estimate, Hermitian-symmetrized covariance, and whether the
/// innovation matrix needed diagonal loading.
pub fn kalman_update(
    h_pred: &CVec,
    q_pred: &CMat,
    y: &CVec,
    a: &SensingMatrix,
    sigma_n2: f64,
) -> Result<(CVec, CMat, bool)> {
    let m = a.n_pilots();
    let mut innovation =
        a.project_covariance(q_pred) + CMat::identity(m, m).scale(sigma_n2);
    innovation = linalg::hermitianize(&innovation);
    let mut loaded = false;
    let inv = match linalg::hermitian_inverse_logdet(&innovation) {
        Ok((inv, _)) => inv,
        Err(_) => {
            let load = 1e-12 * innovation.trace().re.max(1e-300);
            innovation += CMat::identity(m, m).scale(load);
            loaded = true;
            linalg::hermitian_inverse_logdet(&innovation)?.0
        }
    };
    let gain = q_pred * a.matrix().adjoint() * inv;
    let h_hat = h_pred + &gain * (y - a.apply(h_pred));
    let n = q_pred.nrows();
    let q = (CMat::identity(n, n) - &gain * a.matrix()) * q_pred;
    Ok((h_hat, linalg::hermitianize(&q), loaded))
}

/// Log-domain normalization over a sparse support. Returns a dense
/// probability vector and whether the prior fallback was taken.
fn normalize_log_scores(
    support: &[(usize, f64)],
    scores: &[f64],
    n_cells: usize,
) -> (Vec<f64>, bool) {
    let mut pi = vec![0.0; n_cells];
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        let mut total = 0.0;
        for (&(cell, _), &s) in support.iter().zip(scores) {
            let w = (s - max).exp();
            pi[cell] = w;
            total += w;
        }
        if total > 0.0 && total.is_finite() {
            for p in &mut pi {
                *p /= total;
            }
            return (pi, false);
        }
    }
    // Fall back to the transition prior.
    let total: f64 = support.iter().map(|&(_, p)| p).sum();
    for p in &mut pi {
        *p = 0.0;
    }
    for &(cell, p) in support {
        pi[cell] = p / total;
    }
    (pi, true)
}

fn argmax_lowest_index(pi: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in pi.iter().enumerate() {
        if p > pi[best] {
            best = i;
        }
    }
    best
}
