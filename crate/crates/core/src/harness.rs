//! Experiment plumbing: configuration of tracking runs, per-step metric
//! records, and the deterministic CSV-producing runner that ties the
//! scenario, maps, tracker, and baselines together.

use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{self, KfState};
use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::metrics;
use crate::radiomap::RadioMap;
use crate::scenario::{observe, Scenario};
use crate::sensing::random_semi_unitary;
use crate::tracker::{StepSensing, Tracker, TrackerConfig};

pub const CSV_SCHEMA: &str =
    "# rmtrack metrics v1: method,snr_db,seed,t,true_cell,est_cell,loc_error_m,capacity_bps_hz,efficiency";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Proposed { adaptive: bool },
    Kf,
    Ls,
    Ar,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Proposed { adaptive: true } => write!(f, "proposed-adaptive"),
            Method::Proposed { adaptive: false } => write!(f, "proposed-random"),
            Method::Kf => write!(f, "kf"),
            Method::Ls => write!(f, "ls"),
            Method::Ar => write!(f, "ar"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub snr_db: Vec<f64>,
    pub n_pilots: usize,
    pub seeds: Vec<u64>,
    pub t_len: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.snr_db.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("methods, SNR list, and seeds must be nonempty".into()));
        }
        if self.t_len < 2 || self.n_pilots == 0 {
            return Err(Error::Config("t_len must be >= 2 and n_pilots >= 1".into()));
        }
        Ok(())
    }
}

/// One per-slot metrics record.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: usize,
    pub true_cell: usize,
    /// Position estimate; only the proposed tracker localizes.
    pub est_cell: Option<usize>,
    pub loc_error_m: Option<f64>,
    pub capacity: f64,
    pub efficiency: f64,
}

/// Per-(method, SNR, seed) aggregate.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub method: Method,
    pub snr_db: f64,
    pub seed: u64,
    pub mean_capacity: f64,
    pub mean_efficiency: f64,
    pub mean_loc_error_m: Option<f64>,
    pub n_flags: usize,
}

/// Noise power for a target SNR: sigma_n^2 = E{||h||^2} / 10^(SNR/10).
pub fn noise_variance_for_snr(scenario: &Scenario, snr_db: f64) -> f64 {
    scenario.mean_channel_energy() / 10f64.powf(snr_db / 10.0)
}

/// Run one method on one simulated trajectory. Deterministic in `seed`.
pub fn run_single(
    scenario: &Scenario,
    map: &RadioMap,
    method: Method,
    snr_db: f64,
    n_pilots: usize,
    seed: u64,
    t_len: usize,
) -> Result<(Vec<StepRecord>, RunSummary)> {
    let sigma_n2 = noise_variance_for_snr(scenario, snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj = scenario.simulate(t_len, &mut rng)?;
    let gamma = scenario.params.ar_coefficient;
    let n_t = scenario.params.n_antennas;
    let mut records = Vec::with_capacity(t_len);
    let mut n_flags = 0usize;

    let push = |t: usize, est: &CVec, est_cell: Option<usize>, records: &mut Vec<StepRecord>| {
        let h_true = &traj.channels[t];
        let loc = est_cell.map(|c| scenario.grid.distance(c, traj.positions[t]).unwrap());
        records.push(StepRecord {
            t,
            true_cell: traj.positions[t],
            est_cell,
            loc_error_m: loc,
            capacity: metrics::capacity(h_true, est, sigma_n2),
            efficiency: metrics::efficiency_ratio(h_true, est, sigma_n2),
        });
    };

    match method {
        Method::Proposed { adaptive } => {
            let cfg = TrackerConfig {
                gamma,
                sigma_n2,
                sigma_h2: scenario.layout.sigma_h2,
                n_pilots,
            };
            let tracker = Tracker::new(vec![map], &scenario.mobility, cfg)?;
            let a0 = random_semi_unitary(n_pilots, n_t, &mut rng)?;
            let y0 = observe(&traj.channels[0], &a0, sigma_n2, &mut rng)?;
            let mut state = tracker.init(&[y0], &[a0], &mut rng)?;
            push(0, &state.filters[0].h_hat, Some(state.p_hat), &mut records);
            for t in 1..t_len {
                let strategy =
                    if adaptive { StepSensing::Adaptive } else { StepSensing::Random };
                let h_true = traj.channels[t].clone();
                let mut obs_rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E3779B97F4A7C15));
                let out = tracker.step(
                    &state,
                    strategy,
                    &mut |_, a| observe(&h_true, a, sigma_n2, &mut obs_rng),
                    &mut rng,
                )?;
                n_flags += out.flags.len();
                state = out.state;
                push(t, &state.filters[0].h_hat, Some(state.p_hat), &mut records);
            }
        }
        Method::Kf => {
            let q_process = baselines::energy_matched_process_cov(map.covariances(), gamma)?;
            let mut state = KfState::stationary(&q_process, gamma);
            for t in 0..t_len {
                let a = random_semi_unitary(n_pilots, n_t, &mut rng)?;
                let y = observe(&traj.channels[t], &a, sigma_n2, &mut rng)?;
                let (next, loaded) = baselines::kf_step(&state, &y, &a, sigma_n2, gamma, &q_process)?;
                if loaded {
                    n_flags += 1;
                }
                state = next;
                push(t, &state.h_hat, None, &mut records);
            }
        }
        Method::Ls => {
            for t in 0..t_len {
                let a = random_semi_unitary(n_pilots, n_t, &mut rng)?;
                let y = observe(&traj.channels[t], &a, sigma_n2, &mut rng)?;
                let est = baselines::ls_estimate(&y, &a)?;
                push(t, &est, None, &mut records);
            }
        }
        Method::Ar => {
            // LS estimates with full pilots feed a sliding history of 10;
            // the evaluated estimate is the one-step AR prediction.
            const HISTORY: usize = 10;
            const ORDER: usize = 1;
            let mut history: Vec<CVec> = Vec::new();
            for t in 0..t_len {
                let a = random_semi_unitary(n_t, n_t, &mut rng)?;
                let y = observe(&traj.channels[t], &a, sigma_n2, &mut rng)?;
                let ls = baselines::ls_estimate(&y, &a)?;
                let est = if history.len() >= ORDER + 1 {
                    let (pred, loaded) = baselines::ar_predict(&history, ORDER)?;
                    if loaded {
                        n_flags += 1;
                    }
                    pred
                } else {
                    ls.clone()
                };
                history.push(ls);
                if history.len() > HISTORY {
                    history.remove(0);
                }
                push(t, &est, None, &mut records);
            }
        }
    }

    let summary = summarize(method, snr_db, seed, &records, n_flags);
    Ok((records, summary))
}

/// Multi-BS variant of the proposed tracker: every map is treated as one
/// base station observing the same channel through its own pilots and
/// independent noise; position posteriors are fused multiplicatively.
pub fn run_multi_bs(
    scenario: &Scenario,
    maps: &[&RadioMap],
    adaptive: bool,
    snr_db: f64,
    n_pilots: usize,
    seed: u64,
    t_len: usize,
) -> Result<(Vec<StepRecord>, RunSummary)> {
    let sigma_n2 = noise_variance_for_snr(scenario, snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj = scenario.simulate(t_len, &mut rng)?;
    let n_t = scenario.params.n_antennas;
    let cfg = TrackerConfig {
        gamma: scenario.params.ar_coefficient,
        sigma_n2,
        sigma_h2: scenario.layout.sigma_h2,
        n_pilots,
    };
    let tracker = Tracker::new(maps.to_vec(), &scenario.mobility, cfg)?;
    let mut records = Vec::with_capacity(t_len);
    let mut n_flags = 0usize;

    let push = |t: usize, est: &CVec, cell: usize, records: &mut Vec<StepRecord>| {
        let h_true = &traj.channels[t];
        records.push(StepRecord {
            t,
            true_cell: traj.positions[t],
            est_cell: Some(cell),
            loc_error_m: Some(scenario.grid.distance(cell, traj.positions[t]).unwrap()),
            capacity: metrics::capacity(h_true, est, sigma_n2),
            efficiency: metrics::efficiency_ratio(h_true, est, sigma_n2),
        });
    };

    let mut a0s = Vec::with_capacity(maps.len());
    let mut y0s = Vec::with_capacity(maps.len());
    for _ in maps {
        let a = random_semi_unitary(n_pilots, n_t, &mut rng)?;
        y0s.push(observe(&traj.channels[0], &a, sigma_n2, &mut rng)?);
        a0s.push(a);
    }
    let mut state = tracker.init(&y0s, &a0s, &mut rng)?;
    push(0, &state.filters[0].h_hat, state.p_hat, &mut records);
    for t in 1..t_len {
        let strategy = if adaptive { StepSensing::Adaptive } else { StepSensing::Random };
        let h_true = traj.channels[t].clone();
        let mut obs_rng =
            ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let out = tracker.step(
            &state,
            strategy,
            &mut |_, a| observe(&h_true, a, sigma_n2, &mut obs_rng),
            &mut rng,
        )?;
        n_flags += out.flags.len();
        state = out.state;
        push(t, &state.filters[0].h_hat, state.p_hat, &mut records);
    }
    let summary =
        summarize(Method::Proposed { adaptive }, snr_db, seed, &records, n_flags);
    Ok((records, summary))
}

/// Aggregate a record stream; the means are plain averages of the per-step
/// rows so the summary is consistent with the stream by construction.
pub fn summarize(
    method: Method,
    snr_db: f64,
    seed: u64,
    records: &[StepRecord],
    n_flags: usize,
) -> RunSummary {
    let n = records.len().max(1) as f64;
    let mean_capacity = records.iter().map(|r| r.capacity).sum::<f64>() / n;
    let mean_efficiency = records.iter().map(|r| r.efficiency).sum::<f64>() / n;
    let locs: Vec<f64> = records.iter().filter_map(|r| r.loc_error_m).collect();
    let mean_loc = if locs.is_empty() {
        None
    } else {
        Some(locs.iter().sum::<f64>() / locs.len() as f64)
    };
    RunSummary {
        method,
        snr_db,
        seed,
        mean_capacity,
        mean_efficiency,
        mean_loc_error_m: mean_loc,
        n_flags,
    }
}

fn csv_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

/// Run the full (method, SNR, seed) grid and stream CSV rows: one row per
/// step plus one aggregate row (t = "agg") per run. Returns the aggregates
/// and the total number of numerical-fallback flags.
pub fn run_experiment<W: Write>(
    scenario: &Scenario,
    map: &RadioMap,
    config: &RunConfig,
    out: &mut W,
) -> Result<(Vec<RunSummary>, usize)> {
    config.validate()?;
    writeln!(out, "{CSV_SCHEMA}")?;
    writeln!(
        out,
        "method,snr_db,seed,t,true_cell,est_cell,loc_error_m,capacity_bps_hz,efficiency"
    )?;
    let mut summaries = Vec::new();
    let mut total_flags = 0;
    for &method in &config.methods {
        for &snr in &config.snr_db {
            for &seed in &config.seeds {
                let (records, summary) = run_single(
                    scenario, map, method, snr, config.n_pilots, seed, config.t_len,
                )?;
                for r in &records {
                    writeln!(
                        out,
                        "{method},{snr},{seed},{},{},{},{},{:.12e},{:.12e}",
                        r.t,
                        r.true_cell,
                        csv_opt_usize(r.est_cell),
                        csv_opt_f64(r.loc_error_m),
                        r.capacity,
                        r.efficiency
                    )?;
                }
                writeln!(
                    out,
                    "{method},{snr},{seed},agg,,,{},{:.12e},{:.12e}",
                    csv_opt_f64(summary.mean_loc_error_m),
                    summary.mean_capacity,
                    summary.mean_efficiency
                )?;
                total_flags += summary.n_flags;
                summaries.push(summary);
            }
        }
    }
    Ok((summaries, total_flags))
}
