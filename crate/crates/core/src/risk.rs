//! Monte Carlo estimation of default counts, loss distributions and
//! systemic-risk probabilities.
//!
//! Path `p` of an ensemble draws its noise from `(seed, p)`, so every estimator
//! is a deterministic function of its inputs whatever the thread count: paths
//! run in parallel and are reduced in path order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::model::{simulate_prepared, ModelSpec, StepTable, StopRule, SystemState};
use crate::sde::{NoiseStreams, TimeGrid};

/// Systemic threshold `M = int[N/2] + 1`.
pub fn systemic_threshold(n_banks: usize) -> usize {
    n_banks / 2 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskDefinition {
    /// At least `M` banks default in the interval.
    TypeM,
    /// The empirical mean of the active banks reaches the default level.
    MeanBarrier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDistribution {
    /// `counts[k]` is the number of paths with exactly `k` defaults.
    pub counts: Vec<u64>,
    pub n_paths: u64,
}

impl LossDistribution {
    fn from_defaults(n_banks: usize, defaults: impl Iterator<Item = usize>) -> Self {
        let mut counts = vec![0u64; n_banks + 1];
        let mut n_paths = 0;
        for k in defaults {
            counts[k] += 1;
            n_paths += 1;
        }
        LossDistribution { counts, n_paths }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n_paths as f64).collect()
    }

    /// Fraction of paths with at least `k` defaults.
    pub fn tail_probability(&self, k: usize) -> f64 {
        let hits: u64 = self.counts.iter().skip(k).sum();
        hits as f64 / self.n_paths as f64
    }

    /// Mean number of defaults per path divided by the number of banks.
    pub fn per_bank_default_frequency(&self) -> f64 {
        let n_banks = self.counts.len() - 1;
        let total: u64 = self.counts.iter().enumerate().map(|(k, &c)| k as u64 * c).sum();
        total as f64 / (self.n_paths as f64 * n_banks as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub n_paths: u64,
    pub definition: RiskDefinition,
}

impl RiskEstimate {
    pub fn from_hits(hits: u64, n_paths: u64, definition: RiskDefinition) -> Self {
        let p = hits as f64 / n_paths as f64;
        RiskEstimate {
            probability: p,
            std_error: (p * (1.0 - p) / n_paths as f64).sqrt(),
            n_paths,
            definition,
        }
    }
}

/// Per-path quantities retained by an ensemble run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    pub n_defaults: usize,
    pub mean_hit: bool,
    pub n_active: usize,
    /// Cross-sectional standard deviation of the survivors at the end.
    pub dispersion: Option<f64>,
    pub terminal_mean: Option<f64>,
}

/// Everything one ensemble can report without re-simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub loss: LossDistribution,
    pub type_m: RiskEstimate,
    pub mean_barrier: RiskEstimate,
    pub per_bank_default_frequency: f64,
    /// Mean cross-sectional standard deviation at the end, over paths with at
    /// least two survivors, with its standard error and sample size.
    pub mean_dispersion: Option<f64>,
    pub dispersion_std_error: Option<f64>,
    pub dispersion_paths: u64,
}

fn check_paths(n_paths: u64) -> Result<()> {
    if n_paths == 0 {
        return config("n_paths must be >= 1");
    }
    Ok(())
}

/// Runs `n_paths` paths from `start` (the model's initial state when `None`).
pub fn run_ensemble(
    spec: &ModelSpec,
    grid: &TimeGrid,
    start: Option<&SystemState>,
    n_paths: u64,
    seed: u64,
    stop: StopRule,
) -> Result<Vec<PathSummary>> {
    check_paths(n_paths)?;
    let table = StepTable::new(spec, grid)?;
    let owned;
    let start = match start {
        Some(s) => s,
        None => {
            owned = spec.initial_state(grid.t0())?;
            &owned
        }
    };
    let d = spec.default_level();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut noise = NoiseStreams::new(grid, spec.n_banks(), seed, p)?;
            let r = simulate_prepared(spec, &table, start, &mut noise, stop, false)?;
            let state = &r.terminal_state;
            Ok(PathSummary {
                n_defaults: r.n_defaults,
                mean_hit: r.min_mean <= d,
                n_active: state.n_active(),
                dispersion: (state.n_active() >= 2).then(|| state.dispersion().unwrap_or(0.0)),
                terminal_mean: state.empirical_mean().ok(),
            })
        })
        .collect()
}

/// Histogram of default counts over the interval spanned by `grid`.
pub fn estimate_loss_distribution(
    spec: &ModelSpec,
    grid: &TimeGrid,
    n_paths: u64,
    seed: u64,
) -> Result<LossDistribution> {
    let paths = run_ensemble(spec, grid, None, n_paths, seed, StopRule::NEVER)?;
    Ok(LossDistribution::from_defaults(
        spec.n_banks(),
        paths.iter().map(|p| p.n_defaults),
    ))
}

/// Probability of a systemic event over the interval spanned by `grid`.
pub fn systemic_risk_probability(
    spec: &ModelSpec,
    grid: &TimeGrid,
    n_paths: u64,
    seed: u64,
    definition: RiskDefinition,
) -> Result<RiskEstimate> {
    let start = spec.initial_state(grid.t0())?;
    systemic_risk_from_state(spec, grid, &start, n_paths, seed, definition)
}

/// As [`systemic_risk_probability`], starting every path from `start`.
///
/// Defaults already recorded in `start` do not count towards the event; paths
/// stop as soon as the event indicator is settled.
pub fn systemic_risk_from_state(
    spec: &ModelSpec,
    grid: &TimeGrid,
    start: &SystemState,
    n_paths: u64,
    seed: u64,
    definition: RiskDefinition,
) -> Result<RiskEstimate> {
    let m = systemic_threshold(spec.n_banks());
    let stop = match definition {
        RiskDefinition::TypeM => StopRule {
            at_defaults: Some(m),
            at_mean_barrier: false,
        },
        RiskDefinition::MeanBarrier => StopRule {
            at_defaults: None,
            at_mean_barrier: true,
        },
    };
    let paths = run_ensemble(spec, grid, Some(start), n_paths, seed, stop)?;
    let hits = paths
        .iter()
        .filter(|p| match definition {
            RiskDefinition::TypeM => p.n_defaults >= m,
            RiskDefinition::MeanBarrier => p.mean_hit,
        })
        .count() as u64;
    Ok(RiskEstimate::from_hits(hits, n_paths, definition))
}

/// Loss distribution, both systemic-risk estimates and terminal dispersion
/// from one set of paths.
pub fn summarize_ensemble(spec: &ModelSpec, grid: &TimeGrid, n_paths: u64, seed: u64) -> Result<EnsembleSummary> {
    let paths = run_ensemble(spec, grid, None, n_paths, seed, StopRule::NEVER)?;
    Ok(summarize_paths(spec.n_banks(), &paths))
}

pub fn summarize_paths(n_banks: usize, paths: &[PathSummary]) -> EnsembleSummary {
    let n_paths = paths.len() as u64;
    let loss = LossDistribution::from_defaults(n_banks, paths.iter().map(|p| p.n_defaults));
    let m = systemic_threshold(n_banks);
    let type_m = RiskEstimate::from_hits(
        paths.iter().filter(|p| p.n_defaults >= m).count() as u64,
        n_paths,
        RiskDefinition::TypeM,
    );
    let mean_barrier = RiskEstimate::from_hits(
        paths.iter().filter(|p| p.mean_hit).count() as u64,
        n_paths,
        RiskDefinition::MeanBarrier,
    );
    let disp: Vec<f64> = paths.iter().filter_map(|p| p.dispersion).collect();
    let (mean_dispersion, dispersion_std_error) = match disp.len() {
        0 => (None, None),
        1 => (Some(disp[0]), None),
        n => {
            let mean = disp.iter().sum::<f64>() / n as f64;
            let var = disp.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (Some(mean), Some((var / n as f64).sqrt()))
        }
    };
    EnsembleSummary {
        per_bank_default_frequency: loss.per_bank_default_frequency(),
        loss,
        type_m,
        mean_barrier,
        mean_dispersion,
        dispersion_std_error,
        dispersion_paths: disp.len() as u64,
    }
}
