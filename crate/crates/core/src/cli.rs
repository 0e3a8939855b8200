//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime
//! failure (singular denominator, governance error, ...), 3 I/O failure.

use std::ffi::OsString;
use std::io;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error as ThisError;

use crate::config::{default_out_dir, parse_config, Overrides, RunConfig};
use crate::control::{derive_control_law, solve_riccati};
use crate::error::Error;
use crate::governance::run_experiment;
use crate::meanfield::{simulate_meanfield_ou, simulate_meanfield_two};
use crate::model::{simulate_prepared, Family, RateFn, StepTable, StopRule};
use crate::output::{
    sha256_hex, trajectories_header, Csv, Field, Manifest, OutputDir, CONTROL_LAW_HEADER, DECISIONS_HEADER,
    LOSS_HEADER, MEANFIELD_HEADER, PATHS_HEADER, RICCATI_HEADER, RISK_HEADER, TIMESERIES_HEADER,
};
use crate::risk::{run_ensemble, summarize_paths, EnsembleSummary};
use crate::sde::{sample_noise, NoiseStreams};

#[derive(Debug, Parser)]
#[command(
    name = "sysrisk",
    version,
    about = "Systemic-risk simulation, control and governance"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo paths per estimate.
    #[arg(long = "n-paths", global = true)]
    pub n_paths: Option<u64>,
    /// Euler step of the simulations.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Output directory [default: $SYSRISK_OUT or ./sysrisk-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Reduced scale: 2000 paths and dt = 1e-3 (explicit flags still win).
    #[arg(long, global = true)]
    pub quick: bool,
    /// Worker threads [default: hardware parallelism].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate paths of the configured model and write decimated trajectories.
    Simulate,
    /// Loss distribution and systemic-risk probabilities.
    LossDist,
    /// Riccati coefficients and the derived control law.
    Riccati,
    /// One system path next to its mean-field limit on shared noise.
    Meanfield,
    /// Quarterly governance experiment.
    Govern {
        /// Hold the baseline parameters fixed instead of governing.
        #[arg(long)]
        ungoverned: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::LossDist => "loss-dist",
            Command::Riccati => "riccati",
            Command::Meanfield => "meanfield",
            Command::Govern { .. } => "govern",
        }
    }
}

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(Error),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            eprintln!("wrote {}", out.display());
            0
        }
        Err(e) => {
            eprintln!("sysrisk: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the configuration and runs the subcommand; returns the output directory.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let c = &cli.common;
    let overrides = Overrides {
        seed: c.seed,
        n_paths: c.n_paths,
        dt: c.dt,
        quick: c.quick,
    };
    let cfg = parse_config(c.config.as_deref(), &overrides)?;
    let out = c.out.clone().unwrap_or_else(default_out_dir);
    let threads = c.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Validation(format!("--threads: {e}")))?;
    let threads = pool.current_num_threads();
    pool.install(|| run_subcommand(&cli.command, &cfg, out, threads))
}

/// Runs one subcommand with a validated configuration.
pub fn run_subcommand(cmd: &Command, cfg: &RunConfig, out: PathBuf, threads: usize) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let mut dir = OutputDir::create(&out)?;
    match cmd {
        Command::Simulate => simulate(cfg, &mut dir)?,
        Command::LossDist => loss_dist(cfg, &mut dir)?,
        Command::Riccati => riccati(cfg, &mut dir)?,
        Command::Meanfield => meanfield(cfg, &mut dir)?,
        Command::Govern { ungoverned } => govern(cfg, !ungoverned, &mut dir)?,
    }
    // the recorded configuration carries the already-scaled values, so it
    // reproduces the run without re-applying the quick scaling
    let resolved = RunConfig {
        quick: false,
        ..cfg.clone()
    }
    .to_toml();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cmd.name().to_string(),
        seed: cfg.seed,
        quick: cfg.quick,
        threads,
        config_sha256: sha256_hex(&resolved),
        config: resolved,
        files: dir.files().to_vec(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    dir.write_json("manifest.json", &manifest)?;
    Ok(out)
}

fn summary_json(s: &EnsembleSummary) -> serde_json::Value {
    json!({
        "n_paths": s.loss.n_paths,
        "per_bank_default_frequency": s.per_bank_default_frequency,
        "type_m": s.type_m,
        "mean_barrier": s.mean_barrier,
        "mean_dispersion": s.mean_dispersion,
        "dispersion_std_error": s.dispersion_std_error,
        "loss_probabilities": s.loss.probabilities(),
    })
}

fn simulate(cfg: &RunConfig, dir: &mut OutputDir) -> Result<(), CliError> {
    let spec = cfg.model_spec()?;
    let grid = cfg.model_grid()?;
    let paths = run_ensemble(&spec, &grid, None, cfg.n_paths, cfg.seed, StopRule::NEVER)?;
    let mut csv = Csv::new(PATHS_HEADER);
    for (p, s) in paths.iter().enumerate() {
        csv.row([
            Field::from(p),
            s.n_defaults.into(),
            s.mean_hit.into(),
            s.n_active.into(),
            s.terminal_mean.unwrap_or(f64::NAN).into(),
            s.dispersion.unwrap_or(f64::NAN).into(),
        ]);
    }
    dir.write_csv("paths.csv", &csv)?;

    let table = StepTable::new(&spec, &grid)?;
    let start = spec.initial_state(grid.t0())?;
    let mut traj = Csv::new(&trajectories_header(spec.n_banks()));
    for p in 0..cfg.record_paths.min(cfg.n_paths) {
        let mut noise = NoiseStreams::new(&grid, spec.n_banks(), cfg.seed, p)?;
        let r = simulate_prepared(&spec, &table, &start, &mut noise, StopRule::NEVER, true)?;
        if let Some(rec) = r.trajectory {
            for (t, row) in rec.times.iter().zip(&rec.reserves) {
                let fields = [Field::from(p), Field::from(*t)]
                    .into_iter()
                    .chain(row.iter().map(|&x| Field::from(x)));
                traj.row(fields);
            }
        }
    }
    dir.write_csv("trajectories.csv", &traj)?;
    dir.write_json("summary.json", &summary_json(&summarize_paths(spec.n_banks(), &paths)))?;
    Ok(())
}

fn loss_dist(cfg: &RunConfig, dir: &mut OutputDir) -> Result<(), CliError> {
    let spec = cfg.model_spec()?;
    let grid = cfg.model_grid()?;
    let paths = run_ensemble(&spec, &grid, None, cfg.n_paths, cfg.seed, StopRule::NEVER)?;
    let s = summarize_paths(spec.n_banks(), &paths);
    let mut loss = Csv::new(LOSS_HEADER);
    for (k, (&count, p)) in s.loss.counts.iter().zip(s.loss.probabilities()).enumerate() {
        loss.row([Field::from(k), count.into(), p.into()]);
    }
    dir.write_csv("loss_distribution.csv", &loss)?;
    let mut risk = Csv::new(RISK_HEADER);
    for (name, r) in [("type-m", s.type_m), ("mean-barrier", s.mean_barrier)] {
        risk.row([
            Field::from(name),
            r.probability.into(),
            r.std_error.into(),
            r.n_paths.into(),
        ]);
    }
    dir.write_csv("risk.csv", &risk)?;
    dir.write_json("summary.json", &summary_json(&s))?;
    Ok(())
}

fn riccati(cfg: &RunConfig, dir: &mut OutputDir) -> Result<(), CliError> {
    let problem = cfg.control_problem()?;
    let sol = solve_riccati(&problem, cfg.riccati.dt_ode)?;
    let mut csv = Csv::new(RICCATI_HEADER);
    for (k, t) in sol.grid.points().enumerate() {
        csv.row([Field::from(t), sol.a[k].into(), sol.b[k].into(), sol.c[k].into()]);
    }
    dir.write_csv("riccati.csv", &csv)?;
    let law = derive_control_law(&sol, problem.targets(), &cfg.law_grid()?)?;
    let beta = law.beta_path();
    let mut csv = Csv::new(CONTROL_LAW_HEADER);
    for (k, t) in law.grid.points().enumerate() {
        csv.row([
            Field::from(t),
            law.alpha[k].into(),
            law.gamma[k].into(),
            law.xbar[k].into(),
            law.b[k].into(),
            law.c[k].into(),
            beta[k].into(),
        ]);
    }
    dir.write_csv("control_law.csv", &csv)?;
    dir.write_json(
        "summary.json",
        &json!({
            "lambda": sol.lambda,
            "c0": sol.c[0],
            "b0": sol.b[0],
            "a0": sol.a[0],
            "alpha0": law.alpha[0],
            "gamma0": law.gamma[0],
            "n_clamped": law.n_clamped,
        }),
    )?;
    Ok(())
}

fn meanfield(cfg: &RunConfig, dir: &mut OutputDir) -> Result<(), CliError> {
    let spec = cfg.model_spec()?;
    let grid = cfg.model_grid()?;
    // bank 0 of path 0 and the mean-field path share one noise column
    let mf_noise = sample_noise(&grid, 1, cfg.seed, 0)?;
    let (x, xbar): (Vec<f64>, Vec<f64>) = match spec.family() {
        Family::Independent | Family::FouqueSun => {
            if !spec.vol().is_constant() {
                return Err(CliError::Validation(
                    "[model] the Ornstein-Uhlenbeck limit needs a constant volatility".into(),
                ));
            }
            let alpha = match spec.alpha() {
                RateFn::Constant(a) if spec.family() == Family::FouqueSun => *a,
                _ => 0.0,
            };
            let sigma = spec.vol().eval(grid.t0())?;
            let path = simulate_meanfield_ou(alpha, sigma, &grid, &mf_noise)?;
            let n = path.len();
            (path, vec![0.0; n])
        }
        Family::TwoMechanism => {
            let targets = spec
                .targets()
                .ok_or_else(|| CliError::Runtime(Error::Internal("missing targets".into())))?;
            let path = simulate_meanfield_two(targets, spec.alpha(), spec.gamma(), spec.vol(), &grid, &mf_noise)?;
            path.iter().map(|s| (s.x, s.xbar)).unzip()
        }
    };
    let table = StepTable::new(&spec, &grid)?;
    let start = spec.initial_state(grid.t0())?;
    let mut noise = NoiseStreams::new(&grid, spec.n_banks(), cfg.seed, 0)?;
    let r = simulate_prepared(&spec, &table, &start, &mut noise, StopRule::NEVER, true)?;
    let rec = r
        .trajectory
        .ok_or_else(|| CliError::Runtime(Error::Internal("trajectory not recorded".into())))?;
    let mut csv = Csv::new(MEANFIELD_HEADER);
    for (t, row) in rec.times.iter().zip(&rec.reserves) {
        let k = (((t - grid.t0()) / grid.dt()).round() as usize).min(grid.n_steps());
        let active: Vec<f64> = row.iter().copied().filter(|v| !v.is_nan()).collect();
        let mean = if active.is_empty() {
            f64::NAN
        } else {
            active.iter().sum::<f64>() / active.len() as f64
        };
        csv.row([Field::from(*t), row[0].into(), mean.into(), x[k].into(), xbar[k].into()]);
    }
    dir.write_csv("meanfield.csv", &csv)?;
    dir.write_json(
        "summary.json",
        &json!({
            "family": spec.family(),
            "terminal_x": x.last(),
            "terminal_xbar": xbar.last(),
            "n_defaults": r.n_defaults,
        }),
    )?;
    Ok(())
}

fn govern(cfg: &RunConfig, governed: bool, dir: &mut OutputDir) -> Result<(), CliError> {
    let gcfg = cfg.governance_config();
    let result = run_experiment(&gcfg, governed)?;
    let mut csv = Csv::new(DECISIONS_HEADER);
    for r in &result.records {
        for e in &r.evaluations {
            csv.row([
                Field::from(r.j),
                r.tau1.into(),
                r.sigma.into(),
                e.n.into(),
                e.estimate.probability.into(),
                e.estimate.std_error.into(),
                (e.n == r.chosen_n).into(),
                r.fallback.into(),
            ]);
        }
    }
    dir.write_csv("decisions.csv", &csv)?;
    let mut ts = Csv::new(TIMESERIES_HEADER);
    for row in &result.timeseries {
        ts.row([Field::from(row.t), row.xi.into(), row.mean.into(), row.n_active.into()]);
    }
    dir.write_csv("timeseries.csv", &ts)?;
    let series: Vec<_> = result
        .records
        .iter()
        .map(|r| {
            json!({
                "j": r.j,
                "tau1": r.tau1,
                "sigma": r.sigma,
                "chosen_n": r.chosen_n,
                "probability": r.chosen.probability,
                "std_error": r.chosen.std_error,
                "fallback": r.fallback,
                "n_evaluations": r.evaluations.len(),
                "n_active_after": r.next_state.n_active(),
            })
        })
        .collect();
    let in_band = result
        .records
        .iter()
        .all(|r| gcfg.s1 <= r.chosen.probability && r.chosen.probability <= gcfg.s2);
    dir.write_json(
        "summary.json",
        &json!({
            "governed": governed,
            "S1": gcfg.s1,
            "S2": gcfg.s2,
            "all_in_band": in_band,
            "any_fallback": result.records.iter().any(|r| r.fallback),
            "decisions": series,
        }),
    )?;
    Ok(())
}
