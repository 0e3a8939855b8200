//! C ABI for the `sysrisk` toolkit.
//!
//! Every fallible function returns an [`SrStatus`]; on failure a message is
//! kept per thread and can be read with [`sr_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_solve`/`*_derive`/`*_run` functions and
//! released by the matching `*_free`, which accepts `NULL`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sysrisk::control::{derive_control_law, solve_riccati, ControlLaw, ControlProblem, RiccatiSolution};
use sysrisk::governance::{run_experiment, ExperimentResult, GovernanceConfig};
use sysrisk::model::{ModelSpec, RateFn};
use sysrisk::risk::{estimate_loss_distribution, systemic_risk_probability, RiskDefinition};
use sysrisk::sde::make_grid;
use sysrisk::trajectory::{PerturbedTargets, Segment, Shape, TargetTrajectory, VolSchedule};
use sysrisk::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    State = 4,
    SingularDenominator = 5,
    Governance = 6,
    Internal = 7,
    Panic = 8,
}

/// Model family selector for [`SrModelParams`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrFamily {
    Independent = 0,
    FouqueSun = 1,
    TwoMechanism = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrRiskDefinition {
    TypeM = 0,
    MeanBarrier = 1,
}

/// Constant-coefficient model on `[t0, t1]`. `xi` and `epsilon` are used by
/// the two-mechanism family only (constant target `xi`).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SrModelParams {
    pub family: SrFamily,
    pub n_banks: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub default_level: f64,
    pub xi: f64,
    pub epsilon: f64,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SrRiskEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub n_paths: u64,
}

/// Scalar governance parameters; the volatility schedule is passed separately.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SrGovernanceParams {
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
    pub baseline_xi: f64,
    pub baseline_alpha: f64,
    pub baseline_gamma: f64,
}

/// One governance decision.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SrDecision {
    pub tau1: f64,
    pub sigma: f64,
    pub chosen_n: i32,
    pub probability: f64,
    pub std_error: f64,
    pub fallback: bool,
    pub n_evaluations: usize,
    pub n_active_after: usize,
}

/// Target-trajectory builder.
pub struct SrTrajectory {
    segments: Vec<Segment>,
}

pub struct SrRiccati {
    inner: RiccatiSolution,
}

pub struct SrControlLaw {
    inner: ControlLaw,
}

pub struct SrGovernanceRun {
    inner: ExperimentResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SrStatus {
    match e {
        Error::Config(_) => SrStatus::InvalidArgument,
        Error::Domain(_) => SrStatus::Domain,
        Error::State(_) => SrStatus::State,
        Error::Internal(_) => SrStatus::Internal,
        Error::SingularDenominator { .. } => SrStatus::SingularDenominator,
        Error::Governance(_) => SrStatus::Governance,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), SrStatus>) -> SrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SrStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            SrStatus::Panic
        }
    }
}

fn fail(e: Error) -> SrStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> SrStatus {
    set_error(format!("{what} is NULL"));
    SrStatus::NullPointer
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, SrStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SrStatus> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; valid until the next
/// failing call on the same thread. Never `NULL`.
#[no_mangle]
pub extern "C" fn sr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Systemic threshold `int[N/2] + 1`.
#[no_mangle]
pub extern "C" fn sr_systemic_threshold(n_banks: usize) -> usize {
    sysrisk::risk::systemic_threshold(n_banks)
}

// ---------------------------------------------------------------- trajectories

#[no_mangle]
pub extern "C" fn sr_trajectory_new() -> *mut SrTrajectory {
    Box::into_raw(Box::new(SrTrajectory { segments: Vec::new() }))
}

/// # Safety
/// `traj` must be `NULL` or a handle from [`sr_trajectory_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sr_trajectory_free(traj: *mut SrTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

unsafe fn push(traj: *mut SrTrajectory, start: f64, end: f64, shape: Shape) -> SrStatus {
    guard(|| {
        let t = deref_mut(traj, "trajectory")?;
        t.segments.push(Segment { start, end, shape });
        Ok(())
    })
}

/// Appends a constant segment on `[start, end]`.
///
/// # Safety
/// `traj` must be a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn sr_trajectory_push_constant(
    traj: *mut SrTrajectory,
    start: f64,
    end: f64,
    value: f64,
) -> SrStatus {
    push(traj, start, end, Shape::Constant { value })
}

/// Appends `intercept + slope (t - start)` on `[start, end]`.
///
/// # Safety
/// `traj` must be a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn sr_trajectory_push_linear(
    traj: *mut SrTrajectory,
    start: f64,
    end: f64,
    slope: f64,
    intercept: f64,
) -> SrStatus {
    push(traj, start, end, Shape::Linear { slope, intercept })
}

/// Appends `offset + amplitude sin(2 pi frequency t + phase)` on `[start, end]`.
///
/// # Safety
/// `traj` must be a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn sr_trajectory_push_sinusoid(
    traj: *mut SrTrajectory,
    start: f64,
    end: f64,
    amplitude: f64,
    frequency: f64,
    phase: f64,
    offset: f64,
) -> SrStatus {
    push(
        traj,
        start,
        end,
        Shape::Sinusoid {
            amplitude,
            frequency,
            phase,
            offset,
        },
    )
}

unsafe fn build(traj: *const SrTrajectory) -> Result<TargetTrajectory, SrStatus> {
    let t = deref(traj, "trajectory")?;
    TargetTrajectory::new(t.segments.clone()).map_err(fail)
}

/// Value and right derivative at `t`.
///
/// # Safety
/// `traj` must be a live handle; `value` and `derivative` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_trajectory_eval(
    traj: *const SrTrajectory,
    t: f64,
    value: *mut f64,
    derivative: *mut f64,
) -> SrStatus {
    guard(|| {
        let v = deref_mut(value, "value")?;
        let d = deref_mut(derivative, "derivative")?;
        let (x, dx) = build(traj)?.eval(t).map_err(fail)?;
        *v = x;
        *d = dx;
        Ok(())
    })
}

// ---------------------------------------------------------------- control

/// Solves the Riccati system for the target `traj` on `[t0, t1]`.
///
/// # Safety
/// `traj` must be a live handle; `out` must be writable. On success `*out`
/// owns a new handle to release with [`sr_riccati_free`].
#[no_mangle]
pub unsafe extern "C" fn sr_riccati_solve(
    traj: *const SrTrajectory,
    epsilon: f64,
    lambda: f64,
    t0: f64,
    t1: f64,
    sigma: f64,
    dt_ode: f64,
    out: *mut *mut SrRiccati,
) -> SrStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let targets = PerturbedTargets::new(build(traj)?, epsilon).map_err(fail)?;
        let problem = ControlProblem::new(lambda, t0, t1, targets, sigma).map_err(fail)?;
        let sol = solve_riccati(&problem, dt_ode).map_err(fail)?;
        *out = Box::into_raw(Box::new(SrRiccati { inner: sol }));
        Ok(())
    })
}

/// # Safety
/// `sol` must be `NULL` or a live Riccati handle.
#[no_mangle]
pub unsafe extern "C" fn sr_riccati_free(sol: *mut SrRiccati) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Number of grid points, or 0 for `NULL`.
///
/// # Safety
/// `sol` must be `NULL` or a live Riccati handle.
#[no_mangle]
pub unsafe extern "C" fn sr_riccati_len(sol: *const SrRiccati) -> usize {
    sol.as_ref().map_or(0, |s| s.inner.grid.len())
}

/// Grid point `k`: time and coefficients `a, b, c`.
///
/// # Safety
/// `sol` must be a live handle; all output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_riccati_get(
    sol: *const SrRiccati,
    k: usize,
    t: *mut f64,
    a: *mut f64,
    b: *mut f64,
    c: *mut f64,
) -> SrStatus {
    guard(|| {
        let s = &deref(sol, "riccati")?.inner;
        if k >= s.grid.len() {
            return Err(fail(Error::Domain(format!(
                "index {k} beyond {} grid points",
                s.grid.len()
            ))));
        }
        *deref_mut(t, "t")? = s.grid.point(k);
        *deref_mut(a, "a")? = s.a[k];
        *deref_mut(b, "b")? = s.b[k];
        *deref_mut(c, "c")? = s.c[k];
        Ok(())
    })
}

/// `V(t, z) = a + b z + c z^2` with linear interpolation in `t`.
///
/// # Safety
/// `sol` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_riccati_value(sol: *const SrRiccati, t: f64, z: f64, out: *mut f64) -> SrStatus {
    guard(|| {
        let v = deref(sol, "riccati")?.inner.value_function(t, z).map_err(fail)?;
        *deref_mut(out, "out")? = v;
        Ok(())
    })
}

/// Optimal feedback `-(b + 2 c z) / (2 lambda)`.
///
/// # Safety
/// `sol` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_riccati_beta(sol: *const SrRiccati, t: f64, z: f64, out: *mut f64) -> SrStatus {
    guard(|| {
        let v = deref(sol, "riccati")?.inner.optimal_beta(t, z).map_err(fail)?;
        *deref_mut(out, "out")? = v;
        Ok(())
    })
}

/// Derives `alpha_t`, `gamma_t` on a grid of step `dt` over the Riccati horizon.
///
/// # Safety
/// `sol` and `traj` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_control_law_derive(
    sol: *const SrRiccati,
    traj: *const SrTrajectory,
    epsilon: f64,
    dt: f64,
    out: *mut *mut SrControlLaw,
) -> SrStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let sol = &deref(sol, "riccati")?.inner;
        let targets = PerturbedTargets::new(build(traj)?, epsilon).map_err(fail)?;
        let grid = make_grid(sol.grid.t0(), sol.grid.t1(), dt).map_err(fail)?;
        let law = derive_control_law(sol, &targets, &grid).map_err(fail)?;
        *out = Box::into_raw(Box::new(SrControlLaw { inner: law }));
        Ok(())
    })
}

/// # Safety
/// `law` must be `NULL` or a live control-law handle.
#[no_mangle]
pub unsafe extern "C" fn sr_control_law_free(law: *mut SrControlLaw) {
    if !law.is_null() {
        drop(Box::from_raw(law));
    }
}

/// Number of samples, or 0 for `NULL`.
///
/// # Safety
/// `law` must be `NULL` or a live control-law handle.
#[no_mangle]
pub unsafe extern "C" fn sr_control_law_len(law: *const SrControlLaw) -> usize {
    law.as_ref().map_or(0, |l| l.inner.grid.len())
}

/// Sample `k`: time, `alpha`, `gamma` and the auxiliary mean `xbar`.
///
/// # Safety
/// `law` must be a live handle; all output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_control_law_get(
    law: *const SrControlLaw,
    k: usize,
    t: *mut f64,
    alpha: *mut f64,
    gamma: *mut f64,
    xbar: *mut f64,
) -> SrStatus {
    guard(|| {
        let l = &deref(law, "control law")?.inner;
        if k >= l.alpha.len() {
            return Err(fail(Error::Domain(format!(
                "index {k} beyond {} samples",
                l.alpha.len()
            ))));
        }
        *deref_mut(t, "t")? = l.grid.point(k);
        *deref_mut(alpha, "alpha")? = l.alpha[k];
        *deref_mut(gamma, "gamma")? = l.gamma[k];
        *deref_mut(xbar, "xbar")? = l.xbar[k];
        Ok(())
    })
}

// ---------------------------------------------------------------- risk

fn model_spec(p: &SrModelParams) -> Result<ModelSpec, SrStatus> {
    let vol = VolSchedule::constant(p.sigma).map_err(fail)?;
    let spec = match p.family {
        SrFamily::Independent => ModelSpec::independent(p.n_banks, vol, p.default_level),
        SrFamily::FouqueSun => ModelSpec::fouque_sun(p.n_banks, RateFn::Constant(p.alpha), vol, p.default_level),
        SrFamily::TwoMechanism => {
            let base = TargetTrajectory::constant(p.xi, p.t0, p.t1).map_err(fail)?;
            let targets = PerturbedTargets::new(base, p.epsilon).map_err(fail)?;
            ModelSpec::two_mechanism(
                p.n_banks,
                RateFn::Constant(p.alpha),
                RateFn::Constant(p.gamma),
                targets,
                vol,
                p.default_level,
            )
        }
    };
    spec.map_err(fail)
}

/// Histogram of default counts; `counts` must hold `n_banks + 1` entries.
///
/// # Safety
/// `params` must be readable and `counts` writable for `counts_len` entries.
#[no_mangle]
pub unsafe extern "C" fn sr_loss_distribution(
    params: *const SrModelParams,
    n_paths: u64,
    seed: u64,
    counts: *mut u64,
    counts_len: usize,
) -> SrStatus {
    guard(|| {
        let p = deref(params, "params")?;
        if counts.is_null() {
            return Err(null("counts"));
        }
        if counts_len != p.n_banks + 1 {
            return Err(fail(Error::Config(format!(
                "counts needs n_banks + 1 = {} entries, got {counts_len}",
                p.n_banks + 1
            ))));
        }
        let spec = model_spec(p)?;
        let grid = make_grid(p.t0, p.t1, p.dt).map_err(fail)?;
        let loss = estimate_loss_distribution(&spec, &grid, n_paths, seed).map_err(fail)?;
        std::slice::from_raw_parts_mut(counts, counts_len).copy_from_slice(&loss.counts);
        Ok(())
    })
}

/// Systemic-risk probability under `definition`.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_systemic_risk(
    params: *const SrModelParams,
    n_paths: u64,
    seed: u64,
    definition: SrRiskDefinition,
    out: *mut SrRiskEstimate,
) -> SrStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let out = deref_mut(out, "out")?;
        let spec = model_spec(p)?;
        let grid = make_grid(p.t0, p.t1, p.dt).map_err(fail)?;
        let def = match definition {
            SrRiskDefinition::TypeM => RiskDefinition::TypeM,
            SrRiskDefinition::MeanBarrier => RiskDefinition::MeanBarrier,
        };
        let r = systemic_risk_probability(&spec, &grid, n_paths, seed, def).map_err(fail)?;
        *out = SrRiskEstimate {
            probability: r.probability,
            std_error: r.std_error,
            n_paths: r.n_paths,
        };
        Ok(())
    })
}

// ---------------------------------------------------------------- governance

/// Fills `out` with numerical experiment 1.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_governance_params_default(out: *mut SrGovernanceParams) -> SrStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let g = GovernanceConfig::experiment_one();
        *out = SrGovernanceParams {
            t2: g.t2,
            dtau: g.dtau,
            lookahead: g.lookahead,
            s1: g.s1,
            s2: g.s2,
            lambda: g.lambda,
            epsilon: g.epsilon,
            xi0: g.xi0,
            n_paths: g.n_paths,
            dt_sim: g.dt_sim,
            dt_ode: g.dt_ode,
            seed: g.seed,
            menu_slope_denominator: g.menu_slope_denominator,
            default_level: g.default_level,
            n_banks: g.n_banks,
            baseline_xi: g.baseline.xi,
            baseline_alpha: g.baseline.alpha,
            baseline_gamma: g.baseline.gamma,
        };
        Ok(())
    })
}

/// Runs the governance loop. The volatility schedule is given as `n_vol`
/// `(vol_times[i], vol_sigmas[i])` pieces, each covering `(t_i, t_{i+1}]`.
///
/// # Safety
/// `params` must be readable, `vol_times`/`vol_sigmas` readable for `n_vol`
/// entries, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_governance_run(
    params: *const SrGovernanceParams,
    vol_times: *const f64,
    vol_sigmas: *const f64,
    n_vol: usize,
    governed: bool,
    out: *mut *mut SrGovernanceRun,
) -> SrStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let p = deref(params, "params")?;
        if n_vol == 0 {
            return Err(fail(Error::Config(
                "volatility schedule needs at least one piece".into(),
            )));
        }
        if vol_times.is_null() || vol_sigmas.is_null() {
            return Err(null("volatility schedule"));
        }
        let times = std::slice::from_raw_parts(vol_times, n_vol);
        let sigmas = std::slice::from_raw_parts(vol_sigmas, n_vol);
        let vol = VolSchedule::new(times.iter().copied().zip(sigmas.iter().copied()).collect()).map_err(fail)?;
        let cfg = GovernanceConfig {
            t2: p.t2,
            dtau: p.dtau,
            lookahead: p.lookahead,
            s1: p.s1,
            s2: p.s2,
            lambda: p.lambda,
            epsilon: p.epsilon,
            xi0: p.xi0,
            n_paths: p.n_paths,
            dt_sim: p.dt_sim,
            dt_ode: p.dt_ode,
            seed: p.seed,
            menu_slope_denominator: p.menu_slope_denominator,
            default_level: p.default_level,
            n_banks: p.n_banks,
            vol,
            baseline: sysrisk::governance::Baseline {
                xi: p.baseline_xi,
                alpha: p.baseline_alpha,
                gamma: p.baseline_gamma,
            },
        };
        let result = run_experiment(&cfg, governed).map_err(fail)?;
        *out = Box::into_raw(Box::new(SrGovernanceRun { inner: result }));
        Ok(())
    })
}

/// # Safety
/// `run` must be `NULL` or a live governance-run handle.
#[no_mangle]
pub unsafe extern "C" fn sr_governance_run_free(run: *mut SrGovernanceRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of decisions, or 0 for `NULL`.
///
/// # Safety
/// `run` must be `NULL` or a live governance-run handle.
#[no_mangle]
pub unsafe extern "C" fn sr_governance_run_len(run: *const SrGovernanceRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.records.len())
}

/// Decision `j`.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_governance_run_decision(
    run: *const SrGovernanceRun,
    j: usize,
    out: *mut SrDecision,
) -> SrStatus {
    guard(|| {
        let r = &deref(run, "governance run")?.inner;
        let out = deref_mut(out, "out")?;
        let rec = r
            .records
            .get(j)
            .ok_or_else(|| fail(Error::Domain(format!("decision {j} beyond {}", r.records.len()))))?;
        *out = SrDecision {
            tau1: rec.tau1,
            sigma: rec.sigma,
            chosen_n: rec.chosen_n,
            probability: rec.chosen.probability,
            std_error: rec.chosen.std_error,
            fallback: rec.fallback,
            n_evaluations: rec.evaluations.len(),
            n_active_after: rec.next_state.n_active(),
        };
        Ok(())
    })
}
