//! Banking-system models: drift, Euler path simulation, default detection and
//! removal of failed banks.
//!
//! Three families share one simulator:
//!
//! * `Independent`: `dY^i = sigma dW^i`.
//! * `FouqueSun`: `dY^i = (alpha / N) sum_j (Y^j - Y^i) dt + sigma dW^i`.
//! * `TwoMechanism`: `dX^i = (alpha_t / N) sum_j (X^j - X^i) dt
//!   + gamma_t (mean(X) - xi^-_t) dt + d xi^+_t + sigma_t dW^i`.
//!
//! The `d xi^+` term is applied as the exact increment of `xi^+` over each step,
//! which coincides with `(xi^+)' dt` on linear pieces and keeps the discrete
//! system on the target when all other terms vanish.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{config, ensure_finite, Error, Result};
use crate::sde::{IncrementSource, NoiseBlock, TimeGrid};
use crate::trajectory::{PerturbedTargets, VolSchedule};

/// Maximum number of recorded points per simulated trajectory.
pub const MAX_RECORDED_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Independent,
    FouqueSun,
    TwoMechanism,
}

/// Divisor used in the cooperation terms once banks have been removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by the number of banks still active.
    #[default]
    Active,
    /// Keep dividing by the initial bank count `N`.
    Initial,
}

/// Time-dependent rate `alpha_t` or `gamma_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum RateFn {
    Constant(f64),
    /// Left-endpoint samples on a uniform grid; held constant over each cell and
    /// beyond the last sample.
    Sampled {
        t0: f64,
        dt: f64,
        values: Arc<Vec<f64>>,
    },
}

impl RateFn {
    pub fn sampled(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return config("a sampled rate needs at least one value");
        }
        ensure_finite("rate grid start", t0)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return config(format!("rate grid step must be positive, got {dt}"));
        }
        Ok(RateFn::Sampled {
            t0,
            dt,
            values: Arc::new(values),
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            RateFn::Constant(v) => *v,
            RateFn::Sampled { t0, dt, values } => {
                let raw = ((t - t0) / dt + 1e-6).floor();
                let idx = if raw <= 0.0 { 0 } else { raw as usize };
                values[idx.min(values.len() - 1)]
            }
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            RateFn::Constant(v) => std::slice::from_ref(v),
            RateFn::Sampled { values, .. } => values,
        }
    }

    pub fn all_non_negative(&self) -> bool {
        self.values().iter().all(|v| *v >= 0.0)
    }

    pub fn all_non_positive(&self) -> bool {
        self.values().iter().all(|v| *v <= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// Full description of one banking-system model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    family: Family,
    n_banks: usize,
    alpha: RateFn,
    gamma: RateFn,
    vol: VolSchedule,
    targets: Option<PerturbedTargets>,
    default_level: f64,
    normalization: Normalization,
    initial_reserve: Option<f64>,
}

impl ModelSpec {
    /// Independent diffusions `dY = sigma dW`.
    pub fn independent(n_banks: usize, vol: VolSchedule, default_level: f64) -> Result<Self> {
        Self::build(
            Family::Independent,
            n_banks,
            RateFn::Constant(0.0),
            RateFn::Constant(0.0),
            vol,
            None,
            default_level,
        )
    }

    /// Mean reversion of each bank to the cross-sectional mean at rate `alpha`.
    pub fn fouque_sun(n_banks: usize, alpha: RateFn, vol: VolSchedule, default_level: f64) -> Result<Self> {
        Self::build(
            Family::FouqueSun,
            n_banks,
            alpha,
            RateFn::Constant(0.0),
            vol,
            None,
            default_level,
        )
    }

    /// Inter-bank (`alpha`) and bank-authority (`gamma`) cooperation around `xi^±`.
    pub fn two_mechanism(
        n_banks: usize,
        alpha: RateFn,
        gamma: RateFn,
        targets: PerturbedTargets,
        vol: VolSchedule,
        default_level: f64,
    ) -> Result<Self> {
        Self::build(
            Family::TwoMechanism,
            n_banks,
            alpha,
            gamma,
            vol,
            Some(targets),
            default_level,
        )
    }

    fn build(
        family: Family,
        n_banks: usize,
        alpha: RateFn,
        gamma: RateFn,
        vol: VolSchedule,
        targets: Option<PerturbedTargets>,
        default_level: f64,
    ) -> Result<Self> {
        ensure_finite("default level", default_level)?;
        if n_banks == 0 {
            return config("the banking system needs at least one bank");
        }
        if family != Family::Independent && n_banks < 2 {
            return config("interacting models need N >= 2 banks");
        }
        if !alpha.is_finite() || !gamma.is_finite() {
            return config("cooperation rates must be finite");
        }
        if !alpha.all_non_negative() {
            return config("alpha_t must be >= 0 at every sample");
        }
        if !gamma.all_non_positive() {
            return config("gamma_t must be <= 0 at every sample");
        }
        Ok(ModelSpec {
            family,
            n_banks,
            alpha,
            gamma,
            vol,
            targets,
            default_level,
            normalization: Normalization::Active,
            initial_reserve: None,
        })
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// Overrides the default starting reserves (0 for the `Y` families, `xi^+_0`
    /// for the two-mechanism model).
    pub fn with_initial_reserve(mut self, value: f64) -> Result<Self> {
        ensure_finite("initial reserve", value)?;
        self.initial_reserve = Some(value);
        Ok(self)
    }

    pub fn with_vol(mut self, vol: VolSchedule) -> Self {
        self.vol = vol;
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_banks(&self) -> usize {
        self.n_banks
    }

    pub fn alpha(&self) -> &RateFn {
        &self.alpha
    }

    pub fn gamma(&self) -> &RateFn {
        &self.gamma
    }

    pub fn vol(&self) -> &VolSchedule {
        &self.vol
    }

    pub fn targets(&self) -> Option<&PerturbedTargets> {
        self.targets.as_ref()
    }

    pub fn default_level(&self) -> f64 {
        self.default_level
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Starting reserves of every bank at time `t0`.
    pub fn initial_reserve(&self, t0: f64) -> Result<f64> {
        match (self.initial_reserve, self.family, &self.targets) {
            (Some(v), _, _) => Ok(v),
            (None, Family::TwoMechanism, Some(targets)) => targets.xi_plus(t0),
            _ => Ok(0.0),
        }
    }

    pub fn initial_state(&self, t0: f64) -> Result<SystemState> {
        Ok(SystemState::uniform(self.n_banks, self.initial_reserve(t0)?, t0))
    }

    fn divisor(&self, n_active: usize) -> f64 {
        match self.normalization {
            Normalization::Active => n_active as f64,
            Normalization::Initial => self.n_banks as f64,
        }
    }
}

/// Reserves of the active banks at one time, with the default record so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub time: f64,
    pub reserves: Vec<f64>,
    pub active_ids: Vec<usize>,
    pub defaults: Vec<(usize, f64)>,
}

impl SystemState {
    pub fn uniform(n_banks: usize, value: f64, time: f64) -> Self {
        SystemState {
            time,
            reserves: vec![value; n_banks],
            active_ids: (0..n_banks).collect(),
            defaults: Vec::new(),
        }
    }

    pub fn n_active(&self) -> usize {
        self.reserves.len()
    }

    pub fn empirical_mean(&self) -> Result<f64> {
        empirical_mean(self)
    }

    /// Cross-sectional standard deviation of active reserves (population form).
    pub fn dispersion(&self) -> Option<f64> {
        let n = self.reserves.len();
        if n == 0 {
            return None;
        }
        let mean = self.reserves.iter().sum::<f64>() / n as f64;
        let var = self.reserves.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Some(var.sqrt())
    }

    fn check(&self, n_columns: usize) -> Result<()> {
        if self.reserves.len() != self.active_ids.len() {
            return Err(Error::Internal(format!(
                "{} reserves for {} active ids",
                self.reserves.len(),
                self.active_ids.len()
            )));
        }
        if let Some(&id) = self.active_ids.iter().find(|&&id| id >= n_columns) {
            return Err(Error::Internal(format!(
                "bank id {id} has no noise column (only {n_columns})"
            )));
        }
        Ok(())
    }
}

/// Arithmetic mean of the active reserves.
pub fn empirical_mean(state: &SystemState) -> Result<f64> {
    if state.reserves.is_empty() {
        return Err(Error::State("empirical mean of an empty banking system".into()));
    }
    Ok(state.reserves.iter().sum::<f64>() / state.reserves.len() as f64)
}

/// Decimated record of one path; defaulted banks read `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedTrajectory {
    pub times: Vec<f64>,
    /// One row per recorded time, one column per original bank.
    pub reserves: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub terminal_state: SystemState,
    pub n_defaults: usize,
    pub default_times: Vec<f64>,
    /// Smallest empirical mean of the banks active at each step, read after the
    /// Euler update and before removal.
    pub min_mean: f64,
    /// Simulation ended before the grid end because a stop rule fired.
    pub stopped_early: bool,
    pub trajectory: Option<RecordedTrajectory>,
}

/// Conditions under which a path may end before the grid end.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StopRule {
    /// Stop once this many banks defaulted during the run.
    pub at_defaults: Option<usize>,
    /// Stop once the empirical mean reaches the default level.
    pub at_mean_barrier: bool,
}

impl StopRule {
    pub const NEVER: StopRule = StopRule {
        at_defaults: None,
        at_mean_barrier: false,
    };
}

/// Drift of every active bank at time `t`, using the derivative `(xi^+)'_t`.
pub fn drift(spec: &ModelSpec, state: &SystemState, t: f64) -> Result<Vec<f64>> {
    let n = state.reserves.len();
    if n == 0 {
        return Err(Error::State("drift of an empty banking system".into()));
    }
    let sum: f64 = state.reserves.iter().sum();
    let divisor = spec.divisor(n);
    let out = match spec.family {
        Family::Independent => vec![0.0; n],
        Family::FouqueSun => {
            let alpha = spec.alpha.eval(t);
            state
                .reserves
                .iter()
                .map(|x| alpha * (sum - n as f64 * x) / divisor)
                .collect()
        }
        Family::TwoMechanism => {
            let targets = spec
                .targets
                .as_ref()
                .ok_or_else(|| Error::Internal("two-mechanism model without targets".into()))?;
            let alpha = spec.alpha.eval(t);
            let gamma = spec.gamma.eval(t);
            let authority = gamma * (sum / divisor - targets.xi_minus(t)?);
            let slope = targets.xi_plus_derivative(t)?;
            state
                .reserves
                .iter()
                .map(|x| alpha * (sum - n as f64 * x) / divisor + authority + slope)
                .collect()
        }
    };
    Ok(out)
}

/// Per-step coefficients of a model on a fixed grid, computed once and shared
/// by every path of an ensemble.
#[derive(Debug, Clone)]
pub struct StepTable {
    grid: TimeGrid,
    alpha: Vec<f64>,
    gamma: Vec<f64>,
    sigma: Vec<f64>,
    xi_minus: Vec<f64>,
    xi_plus_increment: Vec<f64>,
}

impl StepTable {
    pub fn new(spec: &ModelSpec, grid: &TimeGrid) -> Result<Self> {
        let n = grid.n_steps();
        let mut table = StepTable {
            grid: *grid,
            alpha: Vec::with_capacity(n),
            gamma: Vec::with_capacity(n),
            sigma: Vec::with_capacity(n),
            xi_minus: Vec::with_capacity(n),
            xi_plus_increment: Vec::with_capacity(n),
        };
        let mut xi_plus_prev = match (&spec.family, &spec.targets) {
            (Family::TwoMechanism, Some(t)) => t.xi_plus(grid.point(0))?,
            _ => 0.0,
        };
        for k in 0..n {
            let t = grid.point(k);
            let (alpha, gamma) = match spec.family {
                Family::Independent => (0.0, 0.0),
                Family::FouqueSun => (spec.alpha.eval(t), 0.0),
                Family::TwoMechanism => (spec.alpha.eval(t), spec.gamma.eval(t)),
            };
            table.alpha.push(alpha);
            table.gamma.push(gamma);
            table.sigma.push(spec.vol.eval(t)?);
            match (&spec.family, &spec.targets) {
                (Family::TwoMechanism, Some(targets)) => {
                    let next = targets.xi_plus(grid.point(k + 1))?;
                    table.xi_minus.push(targets.xi_minus(t)?);
                    table.xi_plus_increment.push(next - xi_plus_prev);
                    xi_plus_prev = next;
                }
                (Family::TwoMechanism, None) => {
                    return Err(Error::Internal("two-mechanism model without targets".into()))
                }
                _ => {
                    table.xi_minus.push(0.0);
                    table.xi_plus_increment.push(0.0);
                }
            }
        }
        Ok(table)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
}

fn decimation_stride(n_steps: usize) -> usize {
    n_steps.div_ceil(MAX_RECORDED_POINTS - 1).max(1)
}

/// Simulates one path from the model's initial state.
pub fn simulate_path(
    spec: &ModelSpec,
    grid: &TimeGrid,
    noise: &NoiseBlock,
    record_trajectory: bool,
) -> Result<PathResult> {
    if noise.n_steps() != grid.n_steps() || noise.n_banks() != spec.n_banks {
        return Err(Error::Internal(format!(
            "noise block is {}x{}, expected {}x{}",
            noise.n_steps(),
            noise.n_banks(),
            grid.n_steps(),
            spec.n_banks
        )));
    }
    let table = StepTable::new(spec, grid)?;
    let state = spec.initial_state(grid.t0())?;
    let mut source = noise;
    simulate_prepared(spec, &table, &state, &mut source, StopRule::NEVER, record_trajectory)
}

/// Simulates one path from an arbitrary starting state.
pub fn simulate_from(
    spec: &ModelSpec,
    grid: &TimeGrid,
    start: &SystemState,
    noise: &mut impl IncrementSource,
    record_trajectory: bool,
) -> Result<PathResult> {
    let table = StepTable::new(spec, grid)?;
    simulate_prepared(spec, &table, start, noise, StopRule::NEVER, record_trajectory)
}

/// Core Euler loop over a precomputed [`StepTable`].
///
/// After each update every active bank at or below the default level is
/// recorded at the new grid time and removed before the next step. Banks keep
/// their original ids, so their noise columns never shift.
pub fn simulate_prepared(
    spec: &ModelSpec,
    table: &StepTable,
    start: &SystemState,
    noise: &mut impl IncrementSource,
    stop: StopRule,
    record_trajectory: bool,
) -> Result<PathResult> {
    start.check(spec.n_banks)?;
    let grid = table.grid;
    let dt = grid.dt();
    let d = spec.default_level;
    let n_total = spec.n_banks;

    let mut xs = start.reserves.clone();
    let mut ids = start.active_ids.clone();
    let mut defaults = start.defaults.clone();
    let prior_defaults = defaults.len();
    let mut min_mean = f64::INFINITY;
    let mut stopped_early = false;

    let stride = decimation_stride(grid.n_steps());
    let mut recorded = record_trajectory.then(|| RecordedTrajectory {
        times: Vec::new(),
        reserves: Vec::new(),
    });
    let record_row = |rec: &mut RecordedTrajectory, t: f64, xs: &[f64], ids: &[usize]| {
        let mut row = vec![f64::NAN; n_total];
        for (x, &id) in xs.iter().zip(ids) {
            row[id] = *x;
        }
        rec.times.push(t);
        rec.reserves.push(row);
    };

    let remove_defaulted = |xs: &mut Vec<f64>, ids: &mut Vec<usize>, t: f64, defaults: &mut Vec<(usize, f64)>| {
        if xs.iter().any(|&x| x <= d) {
            let mut keep = 0;
            for i in 0..xs.len() {
                if xs[i] <= d {
                    defaults.push((ids[i], t));
                } else {
                    xs[keep] = xs[i];
                    ids[keep] = ids[i];
                    keep += 1;
                }
            }
            xs.truncate(keep);
            ids.truncate(keep);
        }
    };

    // banks already at or below the barrier when the interval opens
    if !xs.is_empty() {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        min_mean = min_mean.min(mean);
    }
    remove_defaulted(&mut xs, &mut ids, grid.t0(), &mut defaults);
    if let Some(rec) = recorded.as_mut() {
        record_row(rec, grid.t0(), &xs, &ids);
    }

    let mut last_time = grid.t0();
    for k in 0..grid.n_steps() {
        let n_act = xs.len();
        if n_act == 0 {
            break;
        }
        if let Some(m) = stop.at_defaults {
            if defaults.len() - prior_defaults >= m {
                stopped_early = true;
                break;
            }
        }
        if stop.at_mean_barrier && min_mean <= d {
            stopped_early = true;
            break;
        }

        let sum: f64 = xs.iter().sum();
        let divisor = spec.divisor(n_act);
        let alpha = table.alpha[k];
        let sigma = table.sigma[k];
        let shift = table.gamma[k] * (sum / divisor - table.xi_minus[k]) * dt + table.xi_plus_increment[k];
        let coupling = alpha * dt / divisor;
        let n_act_f = n_act as f64;
        for (x, &id) in xs.iter_mut().zip(ids.iter()) {
            let dw = noise.increment(k, id);
            *x += coupling * (sum - n_act_f * *x) + shift + sigma * dw;
        }

        let t_next = grid.point(k + 1);
        last_time = t_next;
        let mean = xs.iter().sum::<f64>() / n_act_f;
        min_mean = min_mean.min(mean);
        remove_defaulted(&mut xs, &mut ids, t_next, &mut defaults);

        if let Some(rec) = recorded.as_mut() {
            if (k + 1) % stride == 0 || k + 1 == grid.n_steps() {
                record_row(rec, t_next, &xs, &ids);
            }
        }
    }

    let new_defaults: Vec<f64> = defaults[prior_defaults..].iter().map(|&(_, t)| t).collect();
    Ok(PathResult {
        terminal_state: SystemState {
            time: if stopped_early || xs.is_empty() {
                last_time
            } else {
                grid.t1()
            },
            reserves: xs,
            active_ids: ids,
            defaults,
        },
        n_defaults: new_defaults.len(),
        default_times: new_defaults,
        min_mean,
        stopped_early,
        trajectory: recorded,
    })
}
