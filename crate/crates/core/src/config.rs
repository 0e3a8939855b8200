//! TOML run configuration with command-line overrides.
//!
//! Every key is optional; an empty file yields numerical experiment 1
//! (`N = 10`, `xi0 = 1`, `eps = 0.1`, `lambda = 0.001`, `S1 = 0.03`,
//! `S2 = 0.05`, `D = 0.3`, `sigma = 1`). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{ControlProblem, DEFAULT_DT_ODE};
use crate::error::{config, Error, Result};
use crate::governance::{Baseline, GovernanceConfig};
use crate::model::{Family, ModelSpec, Normalization, RateFn};
use crate::sde::{make_grid, TimeGrid};
use crate::trajectory::{PerturbedTargets, TargetTrajectory, VolSchedule};

/// Path count under `--quick`.
pub const QUICK_N_PATHS: u64 = 2000;
/// Simulation step under `--quick`.
pub const QUICK_DT: f64 = 1e-3;

fn default_vol() -> VolSchedule {
    VolSchedule::constant(1.0).expect("constant volatility")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub n_paths: u64,
    /// Euler step of every Monte Carlo simulation.
    pub dt: f64,
    pub quick: bool,
    /// Number of paths whose trajectories `simulate` writes out.
    pub record_paths: u64,
    pub model: ModelSection,
    pub riccati: RiccatiSection,
    pub governance: GovernanceSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20_240_101,
            n_paths: 10_000,
            dt: 1e-4,
            quick: false,
            record_paths: 5,
            model: ModelSection::default(),
            riccati: RiccatiSection::default(),
            governance: GovernanceSection::default(),
        }
    }
}

/// Banking-system model for `simulate`, `loss-dist` and `meanfield`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub family: Family,
    pub n_banks: usize,
    pub default_level: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub normalization: Normalization,
    pub initial_reserve: Option<f64>,
    pub t0: f64,
    pub t1: f64,
    pub vol: VolSchedule,
    /// Target trajectory segments; defaults to the constant `xi = 1` over `[t0, t1]`.
    pub target: Option<TargetTrajectory>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            family: Family::TwoMechanism,
            n_banks: 10,
            default_level: 0.3,
            alpha: 20.0,
            gamma: -1.0,
            epsilon: 0.1,
            normalization: Normalization::Active,
            initial_reserve: None,
            t0: 0.0,
            t1: 1.0,
            vol: default_vol(),
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiSection {
    pub lambda: f64,
    pub t0: f64,
    pub t1: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub dt_ode: f64,
    /// Defaults to the constant `xi = 1.1` over `[t0, t1]`.
    pub target: Option<TargetTrajectory>,
}

impl Default for RiccatiSection {
    fn default() -> Self {
        RiccatiSection {
            lambda: 0.001,
            t0: 0.0,
            t1: 1.0,
            sigma: 1.0,
            epsilon: 0.1,
            dt_ode: DEFAULT_DT_ODE,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GovernanceSection {
    pub t2: f64,
    pub dtau: f64,
    pub lookahead: f64,
    #[serde(rename = "S1")]
    pub s1: f64,
    #[serde(rename = "S2")]
    pub s2: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub xi0: f64,
    pub dt_ode: f64,
    pub menu_slope_denominator: u32,
    pub default_level: f64,
    pub n_banks: usize,
    pub vol: VolSchedule,
    pub baseline: Baseline,
}

impl Default for GovernanceSection {
    fn default() -> Self {
        let g = GovernanceConfig::experiment_one();
        GovernanceSection {
            t2: g.t2,
            dtau: g.dtau,
            lookahead: g.lookahead,
            s1: g.s1,
            s2: g.s2,
            lambda: g.lambda,
            epsilon: g.epsilon,
            xi0: g.xi0,
            dt_ode: g.dt_ode,
            menu_slope_denominator: g.menu_slope_denominator,
            default_level: g.default_level,
            n_banks: g.n_banks,
            vol: g.vol,
            baseline: g.baseline,
        }
    }
}

/// Values given on the command line; `None` leaves the file value in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_paths: Option<u64>,
    pub dt: Option<f64>,
    pub quick: bool,
}

/// Reads `file` (or starts from the defaults), applies `--quick` and then the
/// explicit overrides, and validates the result.
pub fn parse_config(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            parse_str(&text)?
        }
        None => RunConfig::default(),
    };
    if overrides.quick || cfg.quick {
        cfg.quick = true;
        cfg.n_paths = QUICK_N_PATHS;
        cfg.dt = QUICK_DT;
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(n) = overrides.n_paths {
        cfg.n_paths = n;
    }
    if let Some(dt) = overrides.dt {
        cfg.dt = dt;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses TOML text without applying overrides or validation.
pub fn parse_str(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return config("n_paths: must be >= 1");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return config(format!("dt: must be finite and > 0, got {}", self.dt));
        }
        self.model_spec().map_err(|e| prefix("model", e))?;
        self.model_grid().map_err(|e| prefix("model", e))?;
        self.control_problem().map_err(|e| prefix("riccati", e))?;
        self.law_grid().map_err(|e| prefix("riccati", e))?;
        self.governance_config()
            .validate()
            .map_err(|e| prefix("governance", e))?;
        Ok(())
    }

    pub fn model_grid(&self) -> Result<TimeGrid> {
        make_grid(self.model.t0, self.model.t1, self.dt)
    }

    fn model_targets(&self) -> Result<PerturbedTargets> {
        let m = &self.model;
        let base = match &m.target {
            Some(t) => t.clone(),
            None => TargetTrajectory::constant(1.0, m.t0, m.t1)?,
        };
        PerturbedTargets::new(base, m.epsilon)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let spec = match m.family {
            Family::Independent => ModelSpec::independent(m.n_banks, m.vol.clone(), m.default_level)?,
            Family::FouqueSun => {
                ModelSpec::fouque_sun(m.n_banks, RateFn::Constant(m.alpha), m.vol.clone(), m.default_level)?
            }
            Family::TwoMechanism => {
                let targets = self.model_targets()?;
                let base = targets.base();
                if base.start() > m.t0 + 1e-12 || base.end() < m.t1 - 1e-12 {
                    return config("target: must cover [t0, t1]");
                }
                ModelSpec::two_mechanism(
                    m.n_banks,
                    RateFn::Constant(m.alpha),
                    RateFn::Constant(m.gamma),
                    targets,
                    m.vol.clone(),
                    m.default_level,
                )?
            }
        };
        let spec = spec.with_normalization(m.normalization);
        match m.initial_reserve {
            Some(x) => spec.with_initial_reserve(x),
            None => Ok(spec),
        }
    }

    pub fn control_problem(&self) -> Result<ControlProblem> {
        let r = &self.riccati;
        let base = match &r.target {
            Some(t) => t.clone(),
            None => TargetTrajectory::constant(1.1, r.t0, r.t1)?,
        };
        ControlProblem::new(r.lambda, r.t0, r.t1, PerturbedTargets::new(base, r.epsilon)?, r.sigma)
    }

    /// Grid on which the control law is sampled.
    pub fn law_grid(&self) -> Result<TimeGrid> {
        make_grid(self.riccati.t0, self.riccati.t1, self.dt)
    }

    pub fn governance_config(&self) -> GovernanceConfig {
        let g = &self.governance;
        GovernanceConfig {
            t2: g.t2,
            dtau: g.dtau,
            lookahead: g.lookahead,
            s1: g.s1,
            s2: g.s2,
            lambda: g.lambda,
            epsilon: g.epsilon,
            xi0: g.xi0,
            n_paths: self.n_paths,
            dt_sim: self.dt,
            dt_ode: g.dt_ode,
            seed: self.seed,
            menu_slope_denominator: g.menu_slope_denominator,
            default_level: g.default_level,
            n_banks: g.n_banks,
            vol: g.vol.clone(),
            baseline: g.baseline,
        }
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) | Error::Domain(msg) => Error::Config(format!("[{section}] {msg}")),
        other => other,
    }
}

/// Default output directory: `$SYSRISK_OUT`, else `./sysrisk-out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os("SYSRISK_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("sysrisk-out"))
}
