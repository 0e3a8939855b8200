//! Quarterly systemic-risk governance.
//!
//! At each decision time `tau1` the authority evaluates the next-year
//! probability of a type-`M` systemic event under a menu of target
//! trajectories `P_n`, starting from the current state of the banking system
//! with the volatility frozen at its present value, and keeps the first
//! candidate whose estimate falls inside `[S1, S2]`. The true system then
//! evolves for one quarter under the chosen law and the true volatility.

use serde::{Deserialize, Serialize};

use crate::control::{derive_control_law, solve_riccati, ControlLaw, ControlProblem, DEFAULT_DT_ODE};
use crate::error::{config, ensure_finite, Error, Result};
use crate::model::{simulate_prepared, ModelSpec, RateFn, StepTable, StopRule, SystemState};
use crate::risk::{systemic_risk_from_state, RiskDefinition, RiskEstimate};
use crate::sde::{derive_seed, make_grid, NoiseStreams};
use crate::trajectory::{PerturbedTargets, Segment, Shape, TargetTrajectory, VolSchedule};

/// Seed-derivation tag of the per-quarter candidate estimates.
pub const TAG_ESTIMATE: u64 = 1;
/// Seed-derivation tag of the per-quarter true evolution.
pub const TAG_TRUTH: u64 = 2;

/// Fixed parameters of the ungoverned system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Baseline {
    pub xi: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline {
            xi: 1.0,
            alpha: 20.0,
            gamma: -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceConfig {
    pub t2: f64,
    pub dtau: f64,
    pub lookahead: f64,
    pub s1: f64,
    pub s2: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub xi0: f64,
    pub n_paths: u64,
    pub dt_sim: f64,
    pub dt_ode: f64,
    pub seed: u64,
    pub menu_slope_denominator: u32,
    pub default_level: f64,
    pub n_banks: usize,
    pub vol: VolSchedule,
    pub baseline: Baseline,
}

impl GovernanceConfig {
    /// Numerical experiment 1: `N = 10`, `xi0 = 1`, `eps = 0.1`,
    /// `lambda = 0.001`, `S1 = 0.03`, `S2 = 0.05`, `D = 0.3`, `sigma = 1`.
    pub fn experiment_one() -> Self {
        GovernanceConfig {
            t2: 3.0,
            dtau: 0.25,
            lookahead: 1.0,
            s1: 0.03,
            s2: 0.05,
            lambda: 0.001,
            epsilon: 0.1,
            xi0: 1.0,
            n_paths: 10_000,
            dt_sim: 1e-4,
            dt_ode: DEFAULT_DT_ODE,
            seed: 20_240_101,
            menu_slope_denominator: 8,
            default_level: 0.3,
            n_banks: 10,
            vol: VolSchedule::constant(1.0).expect("constant volatility"),
            baseline: Baseline::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("T2", self.t2),
            ("dtau", self.dtau),
            ("lookahead", self.lookahead),
            ("S1", self.s1),
            ("S2", self.s2),
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
            ("xi0", self.xi0),
            ("dt_sim", self.dt_sim),
            ("dt_ode", self.dt_ode),
            ("D", self.default_level),
        ] {
            ensure_finite(name, v)?;
        }
        if !(0.0 < self.s1 && self.s1 < self.s2 && self.s2 < 1.0) {
            return config(format!(
                "thresholds must satisfy 0 < S1 < S2 < 1, got S1 = {}, S2 = {}",
                self.s1, self.s2
            ));
        }
        if !(self.lookahead > 0.0) {
            return config("lookahead must be > 0");
        }
        if !(self.dtau > 0.0) {
            return config("dtau must be > 0");
        }
        if !(self.lookahead < self.t2 + 1e-12) {
            return config("lookahead must not exceed T2");
        }
        let span = (self.t2 - self.lookahead) / self.dtau;
        if (span - span.round()).abs() > 1e-9 {
            return config("dtau must divide the decision span T2 - lookahead");
        }
        if !(self.lambda > 0.0) {
            return config("lambda must be > 0");
        }
        if !(self.epsilon > 0.0) {
            return config("epsilon must be > 0");
        }
        if self.n_paths == 0 {
            return config("n_paths must be >= 1");
        }
        if self.n_banks < 2 {
            return config("N must be >= 2");
        }
        if self.menu_slope_denominator == 0 {
            return config("menu_slope_denominator must be >= 1");
        }
        if !(self.xi0 + self.epsilon > self.default_level) {
            return config("the initial target xi0 + epsilon must lie above D");
        }
        if self.baseline.alpha < 0.0 || self.baseline.gamma > 0.0 {
            return config("baseline needs alpha >= 0 and gamma <= 0");
        }
        make_grid(0.0, self.dtau, self.dt_sim)?;
        make_grid(0.0, self.lookahead, self.dt_sim)?;
        if self.dt_ode > self.lambda.sqrt() / 10.0 {
            return config("dt_ode must be <= sqrt(lambda)/10");
        }
        Ok(())
    }

    /// Decision times `0, dtau, ..., T2 - lookahead`.
    pub fn decision_times(&self) -> Vec<f64> {
        let n = ((self.t2 - self.lookahead) / self.dtau).round() as usize;
        (0..=n).map(|j| j as f64 * self.dtau).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateTrajectory {
    pub n: i32,
    pub trajectory: TargetTrajectory,
    pub feasible: bool,
}

/// The `2 d + 1` candidates `P_n`, `n = -d..=d`: slope `n / d` over
/// `[tau1, tau1 + dtau]`, then constant until `tau1 + lookahead`.
pub fn build_menu(
    xi_anchor: f64,
    tau1: f64,
    dtau: f64,
    lookahead: f64,
    slope_denominator: u32,
    default_level: f64,
) -> Result<Vec<CandidateTrajectory>> {
    ensure_finite("xi anchor", xi_anchor)?;
    if !(xi_anchor > default_level) {
        return config(format!("menu anchor {xi_anchor} must lie above D = {default_level}"));
    }
    if !(dtau > 0.0 && lookahead > dtau) {
        return config("menu needs 0 < dtau < lookahead");
    }
    let d = slope_denominator as i32;
    let ramp_end = tau1 + dtau;
    (-d..=d)
        .map(|n| {
            let slope = n as f64 / d as f64;
            let plateau = xi_anchor + slope * dtau;
            let trajectory = TargetTrajectory::new(vec![
                Segment {
                    start: tau1,
                    end: ramp_end,
                    shape: Shape::Linear {
                        slope,
                        intercept: xi_anchor,
                    },
                },
                Segment {
                    start: ramp_end,
                    end: tau1 + lookahead,
                    shape: Shape::Constant { value: plateau },
                },
            ])?;
            let feasible = trajectory.stays_above(default_level);
            Ok(CandidateTrajectory {
                n,
                trajectory,
                feasible,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub n: i32,
    pub estimate: RiskEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub evaluations: Vec<Evaluation>,
    pub chosen: usize,
    pub fallback: bool,
}

impl SearchOutcome {
    pub fn chosen_evaluation(&self) -> &Evaluation {
        &self.evaluations[self.chosen]
    }
}

fn band_distance(p: f64, s1: f64, s2: f64) -> f64 {
    (s1 - p).max(p - s2).max(0.0)
}

/// Strategy search: `P_0` first, then away from 0 in the direction that
/// lowers (`p > S2`) or raises (`p < S1`) the risk, stopping at the first
/// estimate inside the band. Infeasible candidates are skipped.
pub fn search_menu(
    menu: &[CandidateTrajectory],
    s1: f64,
    s2: f64,
    mut evaluate: impl FnMut(&CandidateTrajectory) -> Result<RiskEstimate>,
) -> Result<SearchOutcome> {
    let by_n = |n: i32| menu.iter().find(|c| c.n == n && c.feasible);
    let zero = by_n(0).ok_or_else(|| Error::Governance("the constant candidate P_0 is not feasible".into()))?;
    let mut evaluations = vec![Evaluation {
        n: 0,
        estimate: evaluate(zero)?,
    }];
    let p0 = evaluations[0].estimate.probability;
    let inside = |p: f64| s1 <= p && p <= s2;
    if !inside(p0) {
        let max_n = menu.iter().map(|c| c.n.abs()).max().unwrap_or(0);
        let step = if p0 > s2 { 1 } else { -1 };
        for k in 1..=max_n {
            let Some(candidate) = by_n(step * k) else { continue };
            let estimate = evaluate(candidate)?;
            evaluations.push(Evaluation {
                n: candidate.n,
                estimate,
            });
            if inside(estimate.probability) {
                let chosen = evaluations.len() - 1;
                return Ok(SearchOutcome {
                    evaluations,
                    chosen,
                    fallback: false,
                });
            }
        }
        let chosen = evaluations
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                band_distance(a.estimate.probability, s1, s2).total_cmp(&band_distance(b.estimate.probability, s1, s2))
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        return Ok(SearchOutcome {
            evaluations,
            chosen,
            fallback: true,
        });
    }
    Ok(SearchOutcome {
        evaluations,
        chosen: 0,
        fallback: false,
    })
}

/// Control law of one candidate on `[tau1, tau1 + lookahead]` with `sigma`.
pub fn candidate_law(
    candidate: &CandidateTrajectory,
    cfg: &GovernanceConfig,
    sigma: f64,
) -> Result<(PerturbedTargets, ControlLaw)> {
    let traj = &candidate.trajectory;
    let targets = PerturbedTargets::new(traj.clone(), cfg.epsilon)?;
    let problem = ControlProblem::new(cfg.lambda, traj.start(), traj.end(), targets.clone(), sigma)?;
    let sol = solve_riccati(&problem, cfg.dt_ode)?;
    let grid = make_grid(traj.start(), traj.end(), cfg.dt_sim)?;
    let law = derive_control_law(&sol, &targets, &grid)?;
    Ok((targets, law))
}

/// Next-year type-`M` risk of a candidate, from `state`, with the volatility
/// frozen at its value at the decision time.
pub fn evaluate_candidate(
    candidate: &CandidateTrajectory,
    state: &SystemState,
    cfg: &GovernanceConfig,
    seed: u64,
) -> Result<RiskEstimate> {
    if !candidate.feasible {
        return config(format!(
            "candidate P_{} violates the default-level constraint",
            candidate.n
        ));
    }
    let tau1 = candidate.trajectory.start();
    let sigma = cfg.vol.eval(tau1)?;
    let (targets, law) = candidate_law(candidate, cfg, sigma)?;
    let spec = ModelSpec::two_mechanism(
        cfg.n_banks,
        law.alpha_fn(),
        law.gamma_fn(),
        targets,
        VolSchedule::constant(sigma)?,
        cfg.default_level,
    )?;
    let grid = make_grid(tau1, candidate.trajectory.end(), cfg.dt_sim)?;
    systemic_risk_from_state(&spec, &grid, state, cfg.n_paths, seed, RiskDefinition::TypeM)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GovernanceRecord {
    pub j: usize,
    pub tau1: f64,
    pub sigma: f64,
    pub xi_anchor: f64,
    pub evaluations: Vec<Evaluation>,
    pub chosen_n: i32,
    pub chosen: RiskEstimate,
    pub fallback: bool,
    /// State at the start of the quarter.
    pub state: SystemState,
    /// State at the next decision time.
    pub next_state: SystemState,
}

/// One decision: menu search at `state`, then one quarter of true evolution.
pub fn govern_quarter(
    state: &SystemState,
    xi_anchor: f64,
    cfg: &GovernanceConfig,
    j: usize,
) -> Result<(GovernanceRecord, CandidateTrajectory, Vec<TimeseriesRow>)> {
    if state.n_active() == 0 {
        return Err(Error::State("no active banks at the decision time".into()));
    }
    let tau1 = j as f64 * cfg.dtau;
    let menu = build_menu(
        xi_anchor,
        tau1,
        cfg.dtau,
        cfg.lookahead,
        cfg.menu_slope_denominator,
        cfg.default_level,
    )?;
    let seed = derive_seed(cfg.seed, &[TAG_ESTIMATE, j as u64]);
    let outcome = search_menu(&menu, cfg.s1, cfg.s2, |c| evaluate_candidate(c, state, cfg, seed))?;
    let chosen_eval = *outcome.chosen_evaluation();
    let chosen = menu
        .iter()
        .find(|c| c.n == chosen_eval.n)
        .cloned()
        .ok_or_else(|| Error::Internal("chosen candidate missing from menu".into()))?;

    let sigma = cfg.vol.eval(tau1)?;
    let (targets, law) = candidate_law(&chosen, cfg, sigma)?;
    let spec = ModelSpec::two_mechanism(
        cfg.n_banks,
        law.alpha_fn(),
        law.gamma_fn(),
        targets.clone(),
        cfg.vol.clone(),
        cfg.default_level,
    )?;
    let (next_state, rows) = evolve_quarter(&spec, Some(&targets), state, tau1, cfg, j)?;
    let record = GovernanceRecord {
        j,
        tau1,
        sigma,
        xi_anchor,
        evaluations: outcome.evaluations,
        chosen_n: chosen.n,
        chosen: chosen_eval.estimate,
        fallback: outcome.fallback,
        state: state.clone(),
        next_state,
    };
    Ok((record, chosen, rows))
}

/// One recorded point of the true system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeseriesRow {
    pub t: f64,
    pub xi: f64,
    pub mean: f64,
    pub n_active: usize,
}

/// Single true path over one quarter with the true volatility schedule.
fn evolve_quarter(
    spec: &ModelSpec,
    targets: Option<&PerturbedTargets>,
    state: &SystemState,
    tau1: f64,
    cfg: &GovernanceConfig,
    j: usize,
) -> Result<(SystemState, Vec<TimeseriesRow>)> {
    let grid = make_grid(tau1, tau1 + cfg.dtau, cfg.dt_sim)?;
    let table = StepTable::new(spec, &grid)?;
    let seed = derive_seed(cfg.seed, &[TAG_TRUTH, j as u64]);
    let mut noise = NoiseStreams::new(&grid, cfg.n_banks, seed, 0)?;
    let result = simulate_prepared(spec, &table, state, &mut noise, StopRule::NEVER, true)?;
    let mut rows = Vec::new();
    if let Some(rec) = &result.trajectory {
        for (t, row) in rec.times.iter().zip(&rec.reserves) {
            let active: Vec<f64> = row.iter().copied().filter(|x| !x.is_nan()).collect();
            let xi = match targets {
                Some(tg) => tg.xi(*t)?,
                None => cfg.baseline.xi,
            };
            rows.push(TimeseriesRow {
                t: *t,
                xi,
                mean: if active.is_empty() {
                    f64::NAN
                } else {
                    active.iter().sum::<f64>() / active.len() as f64
                },
                n_active: active.len(),
            });
        }
    }
    Ok((result.terminal_state, rows))
}

/// Ungoverned model with the fixed baseline parameters on `[0, t_end]`.
fn baseline_spec(cfg: &GovernanceConfig, vol: VolSchedule, t_end: f64) -> Result<(ModelSpec, PerturbedTargets)> {
    let targets = PerturbedTargets::new(TargetTrajectory::constant(cfg.baseline.xi, 0.0, t_end)?, cfg.epsilon)?;
    let spec = ModelSpec::two_mechanism(
        cfg.n_banks,
        RateFn::Constant(cfg.baseline.alpha),
        RateFn::Constant(cfg.baseline.gamma),
        targets.clone(),
        vol,
        cfg.default_level,
    )?;
    Ok((spec, targets))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub governed: bool,
    pub records: Vec<GovernanceRecord>,
    pub timeseries: Vec<TimeseriesRow>,
}

impl ExperimentResult {
    /// `(tau1, probability)` at each decision time.
    pub fn probability_series(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.tau1, r.chosen.probability)).collect()
    }
}

/// Runs the decision loop over every decision time. In ungoverned mode the
/// baseline parameters are held fixed and only the next-year risk is recorded.
pub fn run_experiment(cfg: &GovernanceConfig, governed: bool) -> Result<ExperimentResult> {
    cfg.validate()?;
    let x0 = cfg.xi0 + cfg.epsilon;
    let mut state = SystemState::uniform(cfg.n_banks, x0, 0.0);
    let mut anchor = x0;
    let mut records = Vec::new();
    let mut timeseries = Vec::new();
    for (j, &tau1) in cfg.decision_times().iter().enumerate() {
        if state.n_active() == 0 {
            return Err(Error::Governance(format!("every bank defaulted before decision {j}")));
        }
        if governed {
            let (record, chosen, rows) = govern_quarter(&state, anchor, cfg, j)?;
            anchor = chosen.trajectory.value(tau1 + cfg.dtau)?;
            state = record.next_state.clone();
            append_rows(&mut timeseries, rows);
            records.push(record);
        } else {
            let sigma = cfg.vol.eval(tau1)?;
            let (frozen, _) = baseline_spec(cfg, VolSchedule::constant(sigma)?, cfg.t2)?;
            let grid = make_grid(tau1, tau1 + cfg.lookahead, cfg.dt_sim)?;
            let seed = derive_seed(cfg.seed, &[TAG_ESTIMATE, j as u64]);
            let estimate = systemic_risk_from_state(&frozen, &grid, &state, cfg.n_paths, seed, RiskDefinition::TypeM)?;
            let (truth, targets) = baseline_spec(cfg, cfg.vol.clone(), cfg.t2)?;
            let (next_state, rows) = evolve_quarter(&truth, Some(&targets), &state, tau1, cfg, j)?;
            append_rows(&mut timeseries, rows);
            records.push(GovernanceRecord {
                j,
                tau1,
                sigma,
                xi_anchor: cfg.baseline.xi,
                evaluations: vec![Evaluation { n: 0, estimate }],
                chosen_n: 0,
                chosen: estimate,
                fallback: false,
                state: state.clone(),
                next_state: next_state.clone(),
            });
            state = next_state;
        }
    }
    Ok(ExperimentResult {
        governed,
        records,
        timeseries,
    })
}

/// Appends a quarter's rows, dropping the first when it repeats the previous
/// quarter's last time.
fn append_rows(all: &mut Vec<TimeseriesRow>, rows: Vec<TimeseriesRow>) {
    let skip = match (all.last(), rows.first()) {
        (Some(a), Some(b)) if (a.t - b.t).abs() < 1e-12 => 1,
        _ => 0,
    };
    all.extend(rows.into_iter().skip(skip));
}
