//! Synthetic world: grid geometry, truncated Gauss-Markov mobility, geometric
//! multipath channels with AR(1) evolution, and noisy sparse observations.
//! Everything is deterministic under a fixed seed and immutable after
//! construction.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::sensing::SensingMatrix;

/// Equally spaced grid of candidate user locations. Cell index is row-major:
/// `index = row * n_cols + col`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl Grid {
    pub fn new(origin: [f64; 2], resolution: f64, n_rows: usize, n_cols: usize) -> Result<Self> {
        if resolution <= 0.0 {
            return Err(Error::InvalidParameter("grid resolution must be > 0".into()));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidParameter("grid must have at least one cell".into()));
        }
        Ok(Self { origin, resolution, n_rows, n_cols })
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn contains(&self, index: usize) -> bool {
        index < self.n_cells()
    }

    /// Center coordinate of a cell, in meters.
    pub fn center(&self, index: usize) -> Result<[f64; 2]> {
        if !self.contains(index) {
            return Err(Error::CellOutOfRange { index, n_cells: self.n_cells() });
        }
        let row = index / self.n_cols;
        let col = index % self.n_cols;
        Ok([
            self.origin[0] + col as f64 * self.resolution,
            self.origin[1] + row as f64 * self.resolution,
        ])
    }

    /// Index of the grid cell whose center is closest to `point`.
    pub fn nearest_cell(&self, point: [f64; 2]) -> usize {
        let col = ((point[0] - self.origin[0]) / self.resolution).round();
        let row = ((point[1] - self.origin[1]) / self.resolution).round();
        let col = (col.max(0.0) as usize).min(self.n_cols - 1);
        let row = (row.max(0.0) as usize).min(self.n_rows - 1);
        row * self.n_cols + col
    }

    pub fn distance(&self, a: usize, b: usize) -> Result<f64> {
        let pa = self.center(a)?;
        let pb = self.center(b)?;
        Ok(((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt())
    }
}

/// Truncated Gauss-Markov mobility model over grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityModel {
    /// Mean velocity in m/s.
    pub mean_velocity: [f64; 2],
    /// Maximum speed in m/s; cells farther than `max_speed * slot_duration`
    /// are unreachable in one slot.
    pub max_speed: f64,
    /// Slot duration in seconds.
    pub slot_duration: f64,
}

impl MobilityModel {
    pub fn new(mean_velocity: [f64; 2], max_speed: f64, slot_duration: f64) -> Result<Self> {
        if max_speed <= 0.0 || slot_duration <= 0.0 {
            return Err(Error::InvalidParameter(
                "max_speed and slot_duration must be > 0".into(),
            ));
        }
        Ok(Self { mean_velocity, max_speed, slot_duration })
    }

    pub fn truncation_radius(&self) -> f64 {
        self.max_speed * self.slot_duration
    }

    /// Unnormalized transition weight from cell `from` to cell `to`.
    fn weight(&self, grid: &Grid, from: usize, to: usize) -> Result<f64> {
        if grid.distance(from, to)? > self.truncation_radius() {
            return Ok(0.0);
        }
        let xj = grid.center(from)?;
        let xi = grid.center(to)?;
        let target = [
            xj[0] + self.slot_duration * self.mean_velocity[0],
            xj[1] + self.slot_duration * self.mean_velocity[1],
        ];
        let d2 = (xi[0] - target[0]).powi(2) + (xi[1] - target[1]).powi(2);
        Ok((-d2).exp())
    }

    /// Normalized transition row from `from` over all cells.
    pub fn transition_row(&self, grid: &Grid, from: usize) -> Result<Vec<f64>> {
        if !grid.contains(from) {
            return Err(Error::CellOutOfRange { index: from, n_cells: grid.n_cells() });
        }
        let mut row = Vec::with_capacity(grid.n_cells());
        let mut total = 0.0;
        for to in 0..grid.n_cells() {
            let w = self.weight(grid, from, to)?;
            total += w;
            row.push(w);
        }
        if total <= 0.0 {
            return Err(Error::EmptyTransitionSupport { from });
        }
        for w in &mut row {
            *w /= total;
        }
        Ok(row)
    }

    pub fn transition_probability(&self, grid: &Grid, from: usize, to: usize) -> Result<f64> {
        if !grid.contains(to) {
            return Err(Error::CellOutOfRange { index: to, n_cells: grid.n_cells() });
        }
        Ok(self.transition_row(grid, from)?[to])
    }

    /// Cells reachable in one slot with their transition probabilities.
    pub fn reachable(&self, grid: &Grid, from: usize) -> Result<Vec<(usize, f64)>> {
        let row = self.transition_row(grid, from)?;
        Ok(row
            .into_iter()
            .enumerate()
            .filter(|&(_, p)| p > 0.0)
            .collect())
    }

    /// Sample the next cell given the current one.
    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        grid: &Grid,
        from: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let row = self.transition_row(grid, from)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(i);
            }
        }
        Ok(row.len() - 1)
    }
}

/// One static propagation path: mean power E|a_l|^2 and departure angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub power: f64,
    /// Departure angle in radians, within [-pi/2, pi/2] for the ULA.
    pub angle: f64,
}

/// Per-cell static paths plus the diffuse moving-scatter power.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScattererLayout {
    pub paths: Vec<Vec<PathSpec>>,
    pub sigma_h2: f64,
    pub los: Vec<bool>,
}

impl ScattererLayout {
    /// Checks the angle range and that sigma_h^2 stays below a tenth of the
    /// mean static-path energy per antenna.
    pub fn validate(&self, n_antennas: usize) -> Result<()> {
        if self.sigma_h2 < 0.0 {
            return Err(Error::InvalidParameter("sigma_h2 must be >= 0".into()));
        }
        let mut mean_static = 0.0;
        for cell_paths in &self.paths {
            for p in cell_paths {
                if p.angle < -std::f64::consts::FRAC_PI_2 - 1e-12
                    || p.angle > std::f64::consts::FRAC_PI_2 + 1e-12
                {
                    return Err(Error::InvalidParameter(format!(
                        "path angle {} outside [-pi/2, pi/2]",
                        p.angle
                    )));
                }
                if p.power < 0.0 {
                    return Err(Error::InvalidParameter("path power must be >= 0".into()));
                }
                // E||h^s||^2 contribution of one path is N_t * power.
                mean_static += n_antennas as f64 * p.power;
            }
        }
        mean_static /= self.paths.len() as f64;
        if self.sigma_h2 > 0.1 * mean_static / n_antennas as f64 {
            return Err(Error::InvalidParameter(format!(
                "sigma_h2 = {} exceeds 0.1 * mean ||h_s||^2 / N_t = {}",
                self.sigma_h2,
                0.1 * mean_static / n_antennas as f64
            )));
        }
        Ok(())
    }
}

/// Antenna count, temporal correlation, and noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub n_antennas: usize,
    pub ar_coefficient: f64,
    pub noise_variance: f64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_antennas < 2 {
            return Err(Error::InvalidParameter("n_antennas must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.ar_coefficient) {
            return Err(Error::InvalidParameter("ar_coefficient must lie in [0, 1]".into()));
        }
        if self.noise_variance <= 0.0 {
            return Err(Error::InvalidParameter("noise_variance must be > 0".into()));
        }
        Ok(())
    }
}

/// Half-wavelength ULA steering vector: element k has phase pi * k * sin(theta).
pub fn steering_vector(theta: f64, n_antennas: usize) -> CVec {
    let s = theta.sin();
    CVec::from_fn(n_antennas, |k, _| {
        Complex64::from_polar(1.0, std::f64::consts::PI * k as f64 * s)
    })
}

/// C(x) = sum_l E|a_l|^2 alpha(theta_l) alpha(theta_l)^H + sigma_h^2 I.
pub fn true_covariance(paths: &[PathSpec], sigma_h2: f64, n_antennas: usize) -> CMat {
    let mut c = CMat::identity(n_antennas, n_antennas).scale(sigma_h2);
    for p in paths {
        let a = steering_vector(p.angle, n_antennas);
        c += (&a * a.adjoint()).scale(p.power);
    }
    c
}

/// One AR(1) step: h_t = gamma h_{t-1} + sqrt(1 - gamma^2) u_t with
/// u_t ~ CN(0, C), sampled via a Hermitian square root of C.
pub fn evolve_channel<R: Rng + ?Sized>(
    h_prev: &CVec,
    cov: &CMat,
    gamma: f64,
    rng: &mut R,
) -> Result<CVec> {
    let u = linalg::sample_cn(cov, rng)?;
    Ok(h_prev.scale(gamma) + u.scale((1.0 - gamma * gamma).sqrt()))
}

/// y = A h + n with n ~ CN(0, sigma_n^2 I).
pub fn observe<R: Rng + ?Sized>(
    h: &CVec,
    a: &SensingMatrix,
    sigma_n2: f64,
    rng: &mut R,
) -> Result<CVec> {
    if a.n_antennas() != h.len() {
        return Err(Error::DimensionMismatch { expected: h.len(), got: a.n_antennas() });
    }
    let noise = linalg::sample_cn_std(a.n_pilots(), rng).scale(sigma_n2.sqrt());
    Ok(a.apply(h) + noise)
}

/// Ground-truth position and channel sequence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub positions: Vec<usize>,
    pub channels: Vec<CVec>,
    pub timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks the one-slot reachability of consecutive cells and finiteness
    /// of the channel entries.
    pub fn validate(&self, grid: &Grid, mobility: &MobilityModel) -> Result<()> {
        for w in self.positions.windows(2) {
            let d = grid.distance(w[0], w[1])?;
            if d > mobility.truncation_radius() + 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "step {} -> {} exceeds the truncation radius",
                    w[0], w[1]
                )));
            }
        }
        for h in &self.channels {
            if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidParameter("non-finite channel entry".into()));
            }
        }
        Ok(())
    }

    /// CSV export: t, cell index, x, y.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut out: W) -> Result<()> {
        writeln!(out, "t,cell,x,y")?;
        for (t, &cell) in self.positions.iter().enumerate() {
            let c = grid.center(cell)?;
            writeln!(out, "{},{},{},{}", t, cell, c[0], c[1])?;
        }
        Ok(())
    }
}

/// How LOS/NLOS flags are assigned to cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LosMode {
    /// Vertical thirds: NLOS | LOS | NLOS, reproducing a route that crosses
    /// propagation regimes.
    Bands,
    /// Independent per-cell flags with the configured NLOS fraction.
    Random,
}

/// Procedural scatterer generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScattererSpec {
    pub los_mode: LosMode,
    pub nlos_fraction: f64,
    pub sigma_h2: f64,
}

impl Default for ScattererSpec {
    fn default() -> Self {
        Self { los_mode: LosMode::Bands, nlos_fraction: 0.5, sigma_h2: 0.01 }
    }
}

fn default_origin() -> [f64; 2] {
    [0.0, 0.0]
}

/// Scenario configuration file contents (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    pub resolution: f64,
    #[serde(default = "default_origin")]
    pub origin: [f64; 2],
    pub mean_velocity: [f64; 2],
    pub max_speed: f64,
    pub slot_duration: f64,
    pub n_antennas: usize,
    pub ar_coefficient: f64,
    /// Either a noise variance or an SNR in dB must be given.
    pub noise_variance: Option<f64>,
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub scatterers: ScattererSpec,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Small default world: 20 x 20 grid at 5 m, N_t = 16.
    pub fn default_world(seed: u64) -> Self {
        Self {
            n_rows: 20,
            n_cols: 20,
            resolution: 5.0,
            origin: [0.0, 0.0],
            mean_velocity: [10.0, 5.0],
            max_speed: 16.0,
            slot_duration: 0.5,
            n_antennas: 16,
            ar_coefficient: 0.5,
            noise_variance: None,
            snr_db: Some(20.0),
            scatterers: ScattererSpec::default(),
            seed,
        }
    }
}

/// Immutable synthetic world: grid, mobility, scatterers, channel parameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: Grid,
    pub mobility: MobilityModel,
    pub layout: ScattererLayout,
    pub params: ChannelParams,
    covariances: Vec<CMat>,
}

impl Scenario {
    pub fn new(
        grid: Grid,
        mobility: MobilityModel,
        layout: ScattererLayout,
        params: ChannelParams,
    ) -> Result<Self> {
        params.validate()?;
        if layout.paths.len() != grid.n_cells() || layout.los.len() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells(),
                got: layout.paths.len(),
            });
        }
        layout.validate(params.n_antennas)?;
        let covariances = (0..grid.n_cells())
            .map(|i| true_covariance(&layout.paths[i], layout.sigma_h2, params.n_antennas))
            .collect();
        Ok(Self { grid, mobility, layout, params, covariances })
    }

    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let grid = Grid::new(cfg.origin, cfg.resolution, cfg.n_rows, cfg.n_cols)?;
        let mobility = MobilityModel::new(cfg.mean_velocity, cfg.max_speed, cfg.slot_duration)?;
        let layout = generate_layout(&grid, &cfg.scatterers, cfg.seed);
        let params = ChannelParams {
            n_antennas: cfg.n_antennas,
            ar_coefficient: cfg.ar_coefficient,
            noise_variance: 1.0, // replaced below once the mean energy is known
        };
        let mut scenario = Self::new(grid, mobility, layout, params)?;
        let sigma_n2 = match (cfg.noise_variance, cfg.snr_db) {
            (Some(v), _) => v,
            (None, Some(snr)) => scenario.mean_channel_energy() / 10f64.powf(snr / 10.0),
            (None, None) => {
                return Err(Error::Config("need noise_variance or snr_db".into()));
            }
        };
        scenario.params.noise_variance = sigma_n2;
        scenario.params.validate()?;
        Ok(scenario)
    }

    /// E{||h||^2} averaged over cells, i.e. the mean trace of C(x).
    pub fn mean_channel_energy(&self) -> f64 {
        let total: f64 = self.covariances.iter().map(|c| c.trace().re).sum();
        total / self.covariances.len() as f64
    }

    pub fn covariance(&self, cell: usize) -> Result<&CMat> {
        self.covariances
            .get(cell)
            .ok_or(Error::CellOutOfRange { index: cell, n_cells: self.grid.n_cells() })
    }

    pub fn covariances(&self) -> &[CMat] {
        &self.covariances
    }

    /// Markov-chain position sequence from a uniform initial cell.
    pub fn sample_positions<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Vec<usize>> {
        if len == 0 {
            return Err(Error::InvalidParameter("trajectory length must be >= 1".into()));
        }
        let mut positions = Vec::with_capacity(len);
        let mut cell = rng.gen_range(0..self.grid.n_cells());
        positions.push(cell);
        for _ in 1..len {
            cell = self.mobility.sample_step(&self.grid, cell, rng)?;
            positions.push(cell);
        }
        Ok(positions)
    }

    /// Ground-truth trajectory: positions, AR(1) channels, timestamps.
    pub fn simulate<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Trajectory> {
        let positions = self.sample_positions(len, rng)?;
        let gamma = self.params.ar_coefficient;
        let mut channels = Vec::with_capacity(len);
        let mut h = linalg::sample_cn(self.covariance(positions[0])?, rng)?;
        channels.push(h.clone());
        for &cell in &positions[1..] {
            h = evolve_channel(&h, self.covariance(cell)?, gamma, rng)?;
            channels.push(h.clone());
        }
        let dt = self.mobility.slot_duration;
        let timestamps = (0..len).map(|t| t as f64 * dt).collect();
        Ok(Trajectory { positions, channels, timestamps })
    }
}

/// NLOS cells get 3-6 static paths with random angles; LOS cells get one
/// dominant path plus up to 2 weak ones.
fn generate_layout(grid: &Grid, spec: &ScattererSpec, seed: u64) -> ScattererLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
    let n = grid.n_cells();
    let mut paths = Vec::with_capacity(n);
    let mut los = Vec::with_capacity(n);
    for i in 0..n {
        let col = i % grid.n_cols;
        let is_los = match spec.los_mode {
            LosMode::Bands => {
                let third = grid.n_cols / 3;
                col >= third && col < grid.n_cols - third
            }
            LosMode::Random => rng.gen::<f64>() >= spec.nlos_fraction,
        };
        let angle = |rng: &mut ChaCha8Rng| {
            rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2)
        };
        let cell_paths = if is_los {
            let mut v = vec![PathSpec { power: 1.0, angle: angle(&mut rng) }];
            for _ in 0..rng.gen_range(0..=2usize) {
                v.push(PathSpec { power: 0.05, angle: angle(&mut rng) });
            }
            v
        } else {
            (0..rng.gen_range(3..=6usize))
                .map(|_| PathSpec { power: rng.gen_range(0.2..0.5), angle: angle(&mut rng) })
                .collect()
        };
        paths.push(cell_paths);
        los.push(is_los);
    }
    ScattererLayout { paths, sigma_h2: spec.sigma_h2, los }
}
