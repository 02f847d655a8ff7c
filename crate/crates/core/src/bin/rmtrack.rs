//! Command-line front end: simulate trajectories, run tracking experiments,
//! build radio maps blindly, evaluate estimated maps, and inspect map files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rmtrack::harness::{self, Method, RunConfig};
use rmtrack::mapbuilder::{self, BuilderConfig, CoarsePrior};
use rmtrack::metrics;
use rmtrack::radiomap::{Precision, RadioMap};
use rmtrack::scenario::{observe, Scenario, ScenarioConfig};
use rmtrack::sensing::random_semi_unitary;
use rmtrack::{Error, Result};

#[derive(Parser)]
#[command(name = "rmtrack", about = "Radio-map-embedded CSI tracking toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML; omitted = built-in 20x20 default world.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed for everything derived from this invocation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ScenarioArgs {
    fn load(&self) -> Result<(Scenario, ScenarioConfig)> {
        let cfg = match &self.config {
            Some(p) => ScenarioConfig::from_path(p)?,
            None => ScenarioConfig::default_world(self.seed),
        };
        Ok((Scenario::from_config(&cfg)?, cfg))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a user trajectory and channel sequence to CSV.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 350)]
        steps: usize,
        /// Output CSV path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the effective scenario config to this path.
        #[arg(long)]
        dump_config: Option<PathBuf>,
    },
    /// Run the tracker or a baseline over simulated trajectories.
    Track {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 350)]
        steps: usize,
        /// SNR points in dB (repeatable).
        #[arg(long = "snr-db", default_values_t = vec![20.0])]
        snr_db: Vec<f64>,
        /// Pilots per slot.
        #[arg(long, default_value_t = 1)]
        pilots: usize,
        /// Use the covariance-eigenvector sensing design instead of random pilots.
        #[arg(long)]
        adaptive_sensing: bool,
        /// Override the scenario's AR coefficient.
        #[arg(long)]
        gamma: Option<f64>,
        /// proposed | kf | ls | ar.
        #[arg(long, default_value = "proposed")]
        baseline: String,
        /// Radio map file ("perfect" = ground-truth map).
        #[arg(long, default_value = "perfect")]
        map: String,
        /// Additional map files fused as extra base stations.
        #[arg(long = "bs-list", value_delimiter = ',')]
        bs_list: Vec<PathBuf>,
        /// Number of seeds, used as 0..n offsets from --seed.
        #[arg(long, default_value_t = 1)]
        n_seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit nonzero if any numerical fallback was flagged.
        #[arg(long)]
        strict: bool,
    },
    /// Construct a radio map blindly from a simulated ride with coarse hints.
    BuildMap {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 350)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        mu: f64,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        #[arg(long, default_value_t = 10)]
        max_iters: usize,
        /// Std of the synthetic coarse position hints, meters.
        #[arg(long, default_value_t = 30.0)]
        coarse_noise_std: f64,
        #[arg(long)]
        pilots: Option<usize>,
        #[arg(long = "snr-db", default_value_t = 20.0)]
        snr_db: f64,
        /// Output map file.
        #[arg(long)]
        out_map: PathBuf,
        /// Per-iteration diagnostics CSV (stdout if omitted).
        #[arg(long)]
        iters_csv: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Compare an estimated map against the scenario's true covariances.
    Eval {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map-file utilities.
    Map {
        #[command(subcommand)]
        command: MapCommand,
    },
}

#[derive(Subcommand)]
enum MapCommand {
    /// Dump per-cell trace, rank, and sample count as CSV.
    Inspect {
        map: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn writer_or_stdout(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn load_map(spec: &str, scenario: &Scenario) -> Result<RadioMap> {
    if spec == "perfect" {
        RadioMap::from_true_covariances(scenario)
    } else {
        RadioMap::load(Path::new(spec))
    }
}

fn parse_method(name: &str, adaptive: bool) -> Result<Method> {
    match name {
        "proposed" => Ok(Method::Proposed { adaptive }),
        "kf" => Ok(Method::Kf),
        "ls" => Ok(Method::Ls),
        "ar" => Ok(Method::Ar),
        other => Err(Error::Config(format!("unknown baseline '{other}'"))),
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut strict_violated = false;
    match cli.command {
        Command::Simulate { scenario, steps, out, dump_config } => {
            let (sc, cfg) = scenario.load()?;
            if let Some(p) = dump_config {
                cfg.write_to(&p)?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
            let traj = sc.simulate(steps, &mut rng)?;
            let mut out = writer_or_stdout(&out)?;
            traj.write_csv(&sc.grid, &mut out)?;
        }
        Command::Track {
            scenario,
            steps,
            snr_db,
            pilots,
            adaptive_sensing,
            gamma,
            baseline,
            map,
            bs_list,
            n_seeds,
            out,
            strict,
        } => {
            let (mut sc, mut cfg) = scenario.load()?;
            if let Some(g) = gamma {
                cfg.ar_coefficient = g;
                sc = Scenario::from_config(&cfg)?;
            }
            let method = parse_method(&baseline, adaptive_sensing)?;
            let primary = load_map(&map, &sc)?;
            let extra: Vec<RadioMap> =
                bs_list.iter().map(|p| RadioMap::load(p)).collect::<Result<_>>()?;
            let mut out = writer_or_stdout(&out)?;
            let flags = if extra.is_empty() {
                let run_cfg = RunConfig {
                    methods: vec![method],
                    snr_db,
                    n_pilots: pilots,
                    seeds: (0..n_seeds.max(1)).map(|i| scenario.seed + i).collect(),
                    t_len: steps,
                };
                harness::run_experiment(&sc, &primary, &run_cfg, &mut out)?.1
            } else {
                if !matches!(method, Method::Proposed { .. }) {
                    return Err(Error::Config("--bs-list requires the proposed tracker".into()));
                }
                let mut maps: Vec<&RadioMap> = vec![&primary];
                maps.extend(extra.iter());
                writeln!(out, "{}", harness::CSV_SCHEMA)?;
                writeln!(
                    out,
                    "method,snr_db,seed,t,true_cell,est_cell,loc_error_m,capacity_bps_hz,efficiency"
                )?;
                let mut flags = 0;
                for &snr in &snr_db {
                    for i in 0..n_seeds.max(1) {
                        let seed = scenario.seed + i;
                        let (records, summary) = harness::run_multi_bs(
                            &sc, &maps, adaptive_sensing, snr, pilots, seed, steps,
                        )?;
                        for r in &records {
                            writeln!(
                                out,
                                "{method},{snr},{seed},{},{},{},{:.6},{:.12e},{:.12e}",
                                r.t,
                                r.true_cell,
                                r.est_cell.unwrap(),
                                r.loc_error_m.unwrap(),
                                r.capacity,
                                r.efficiency,
                                method = summary.method
                            )?;
                        }
                        flags += summary.n_flags;
                    }
                }
                flags
            };
            if flags > 0 {
                eprintln!("{flags} numerical fallback(s) flagged");
                if strict {
                    strict_violated = true;
                }
            }
        }
        Command::BuildMap {
            scenario,
            steps,
            mu,
            epsilon,
            max_iters,
            coarse_noise_std,
            pilots,
            snr_db,
            out_map,
            iters_csv,
            strict,
        } => {
            let (sc, _) = scenario.load()?;
            let n_t = sc.params.n_antennas;
            let m = pilots.unwrap_or(n_t);
            let sigma_n2 = harness::noise_variance_for_snr(&sc, snr_db);
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
            let traj = sc.simulate(steps, &mut rng)?;
            let sensing: Vec<_> = (0..steps)
                .map(|_| random_semi_unitary(m, n_t, &mut rng))
                .collect::<Result<_>>()?;
            let observations: Vec<_> = (0..steps)
                .map(|t| observe(&traj.channels[t], &sensing[t], sigma_n2, &mut rng))
                .collect::<Result<_>>()?;
            let coarse =
                CoarsePrior::synthesize(&traj.positions, &sc.grid, coarse_noise_std, &mut rng)?;
            let builder_cfg = BuilderConfig { mu, epsilon, max_iters };
            let result = mapbuilder::build_map(
                &observations,
                &sensing,
                &coarse,
                &sc.grid,
                &sc.mobility,
                sc.params.ar_coefficient,
                sigma_n2,
                &builder_cfg,
                None,
            )?;
            result.map.save(&out_map, Precision::Double)?;
            let mut diag = writer_or_stdout(&iters_csv)?;
            writeln!(diag, "# rmtrack build-map diagnostics v1")?;
            writeln!(diag, "iter,mean_position_change_m,loc_error_m")?;
            let loc = mapbuilder::mean_localization_error(
                &result.trajectory,
                &traj.positions,
                &sc.grid,
            )?;
            for (i, change) in result.position_changes.iter().enumerate() {
                writeln!(diag, "{},{:.6},", i + 1, change)?;
            }
            writeln!(diag, "final,,{loc:.6}")?;
            if !result.converged {
                eprintln!("build-map did not converge within {max_iters} iterations");
                if strict {
                    strict_violated = true;
                }
            }
        }
        Command::Eval { scenario, map, out } => {
            let (sc, _) = scenario.load()?;
            let est = RadioMap::load(&map)?;
            if est.grid() != &sc.grid || est.n_antennas() != sc.params.n_antennas {
                return Err(Error::Config("map does not match the scenario geometry".into()));
            }
            let mut out = writer_or_stdout(&out)?;
            writeln!(out, "# rmtrack eval v1")?;
            writeln!(out, "cell,l2_error,projection_error,samples")?;
            for cell in 0..sc.grid.n_cells() {
                let (l2, proj) =
                    metrics::covariance_errors(sc.covariance(cell)?, est.lookup(cell)?)?;
                writeln!(out, "{cell},{l2:.6},{proj:.6},{}", est.sample_count(cell)?)?;
            }
        }
        Command::Map { command } => match command {
            MapCommand::Inspect { map, out } => {
                let m = RadioMap::load(&map)?;
                let mut out = writer_or_stdout(&out)?;
                m.inspect_csv(&mut out)?;
            }
        },
    }
    Ok(strict_violated)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("strict mode: failing due to flagged fallbacks");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
