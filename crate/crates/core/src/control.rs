//! LQ tracking control of the mean bank and the cooperation rates it implies.
//!
//! The controlled mean bank `dZ = beta dt + sigma dW` minimises
//! `E int (Z - xi)^2 + lambda beta^2 dt`. The value function is quadratic,
//! `V(t, z) = a(t) + b(t) z + c(t) z^2`, with
//!
//! ```text
//! c' = c^2 / lambda - 1
//! b' = b c / lambda + 2 xi
//! a' = -sigma^2 c + b^2 / (4 lambda) - xi^2
//! ```
//!
//! and zero terminal data. Matching the optimal feedback
//! `beta = -(b + 2 c z) / (2 lambda)` with the mean-field drift term by term
//! gives `alpha = c / lambda` and
//! `gamma = (-(c / lambda) xbar - b / (2 lambda) - (xi^+)') / (xbar - xi^-)`.

use serde::Serialize;

use crate::error::{config, ensure_finite, Error, Result};
use crate::model::RateFn;
use crate::sde::{make_grid, TimeGrid};
use crate::trajectory::PerturbedTargets;

/// Default Runge–Kutta step for the Riccati system.
pub const DEFAULT_DT_ODE: f64 = 1e-4;

/// Smallest admissible `|xbar - xi^-|` when extracting `gamma`.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

/// `min_delta (delta p + lambda delta^2) = -p^2 / (4 lambda)`.
pub fn hamiltonian(p: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return config(format!("lambda must be finite and > 0, got {lambda}"));
    }
    Ok(-p * p / (4.0 * lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    lambda: f64,
    t0: f64,
    t1: f64,
    targets: PerturbedTargets,
    sigma: f64,
}

impl ControlProblem {
    /// Control problem on the horizon `[t0, t1]`; `targets` must cover it.
    pub fn new(lambda: f64, t0: f64, t1: f64, targets: PerturbedTargets, sigma: f64) -> Result<Self> {
        ensure_finite("t0", t0)?;
        ensure_finite("t1", t1)?;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return config(format!("lambda must be finite and > 0, got {lambda}"));
        }
        if !(t1 > t0) {
            return config(format!("control horizon needs T1 > t0, got [{t0}, {t1}]"));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return config(format!("volatility must be finite and >= 0, got {sigma}"));
        }
        let base = targets.base();
        if base.start() > t0 + 1e-12 || base.end() < t1 - 1e-12 {
            return config(format!(
                "target trajectory covers [{}, {}], not the control horizon [{t0}, {t1}]",
                base.start(),
                base.end()
            ));
        }
        Ok(ControlProblem {
            lambda,
            t0,
            t1,
            targets,
            sigma,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    pub fn targets(&self) -> &PerturbedTargets {
        &self.targets
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn xi(&self, t: f64) -> f64 {
        let base = self.targets.base();
        // RK4 stages never leave the horizon; clamp only against rounding
        base.value(t.clamp(base.start(), base.end())).unwrap_or(f64::NAN)
    }

    /// Right-hand side `(a', b', c')` of the Riccati system.
    pub fn riccati_rhs(&self, t: f64, [_, b, c]: [f64; 3]) -> [f64; 3] {
        let lam = self.lambda;
        let xi = self.xi(t);
        [
            -self.sigma * self.sigma * c + b * b / (4.0 * lam) - xi * xi,
            b * c / lam + 2.0 * xi,
            c * c / lam - 1.0,
        ]
    }
}

/// Riccati coefficients on a forward-ordered grid over the control horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub lambda: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Backward classical RK4 from `T1` to `t0` with step `dt_ode`.
pub fn solve_riccati(problem: &ControlProblem, dt_ode: f64) -> Result<RiccatiSolution> {
    let limit = problem.lambda.sqrt() / 10.0;
    if !(dt_ode > 0.0) || dt_ode > limit * (1.0 + 1e-12) {
        return config(format!(
            "Riccati step {dt_ode} must lie in (0, sqrt(lambda)/10 = {limit}]"
        ));
    }
    let grid = make_grid(problem.t0, problem.t1, dt_ode)?;
    let n = grid.n_steps();
    let mut a = vec![0.0; n + 1];
    let mut b = vec![0.0; n + 1];
    let mut c = vec![0.0; n + 1];
    let mut y = [0.0f64; 3];
    let axpy = |y: [f64; 3], k: [f64; 3], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2]];
    for k in (0..n).rev() {
        let t = grid.point(k + 1);
        let h = -(t - grid.point(k));
        let k1 = problem.riccati_rhs(t, y);
        let k2 = problem.riccati_rhs(t + 0.5 * h, axpy(y, k1, 0.5 * h));
        let k3 = problem.riccati_rhs(t + 0.5 * h, axpy(y, k2, 0.5 * h));
        let k4 = problem.riccati_rhs(t + h, axpy(y, k3, h));
        for i in 0..3 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Internal(format!("Riccati integration diverged at t = {t}")));
        }
        a[k] = y[0];
        b[k] = y[1];
        c[k] = y[2];
    }
    Ok(RiccatiSolution {
        grid,
        lambda: problem.lambda,
        a,
        b,
        c,
    })
}

impl RiccatiSolution {
    /// Linearly interpolated `(a, b, c)` at `t`.
    pub fn coefficients(&self, t: f64) -> Result<[f64; 3]> {
        let (t0, t1) = (self.grid.t0(), self.grid.t1());
        let tol = 1e-9 * (t1 - t0).max(1.0);
        if !(t >= t0 - tol && t <= t1 + tol) {
            return Err(Error::Domain(format!(
                "t = {t} outside the control horizon [{t0}, {t1}]"
            )));
        }
        let k = self.grid.cell_of(t).min(self.grid.n_steps() - 1);
        let (ta, tb) = (self.grid.point(k), self.grid.point(k + 1));
        let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let lerp = |v: &[f64]| v[k] + w * (v[k + 1] - v[k]);
        Ok([lerp(&self.a), lerp(&self.b), lerp(&self.c)])
    }

    pub fn value_function(&self, t: f64, z: f64) -> Result<f64> {
        let [a, b, c] = self.coefficients(t)?;
        Ok(a + b * z + c * z * z)
    }

    /// Optimal feedback `-(b + 2 c z) / (2 lambda)`.
    pub fn optimal_beta(&self, t: f64, z: f64) -> Result<f64> {
        let [_, b, c] = self.coefficients(t)?;
        Ok(-(b + 2.0 * c * z) / (2.0 * self.lambda))
    }
}

pub fn value_function(sol: &RiccatiSolution, t: f64, z: f64) -> Result<f64> {
    sol.value_function(t, z)
}

pub fn optimal_beta(sol: &RiccatiSolution, t: f64, z: f64) -> Result<f64> {
    sol.optimal_beta(t, z)
}

/// Cooperation rates sampled on a simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlLaw {
    pub grid: TimeGrid,
    pub lambda: f64,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub xbar: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Number of samples where the formula gave `gamma > 0` and was clamped to 0.
    pub n_clamped: usize,
}

impl ControlLaw {
    pub fn alpha_fn(&self) -> RateFn {
        RateFn::Sampled {
            t0: self.grid.t0(),
            dt: self.grid.dt(),
            values: self.alpha.clone().into(),
        }
    }

    pub fn gamma_fn(&self) -> RateFn {
        RateFn::Sampled {
            t0: self.grid.t0(),
            dt: self.grid.dt(),
            values: self.gamma.clone().into(),
        }
    }

    /// Optimal feedback evaluated along the auxiliary mean.
    pub fn beta_path(&self) -> Vec<f64> {
        self.b
            .iter()
            .zip(&self.c)
            .zip(&self.xbar)
            .map(|((b, c), x)| -(b + 2.0 * c * x) / (2.0 * self.lambda))
            .collect()
    }
}

/// Samples `alpha_t = c / lambda` on `grid` and extracts `gamma_t` by stepping
/// the auxiliary mean forward with the clamped rate.
pub fn derive_control_law(sol: &RiccatiSolution, targets: &PerturbedTargets, grid: &TimeGrid) -> Result<ControlLaw> {
    let eps = targets.epsilon();
    if !(eps > 0.0) {
        return config("deriving the authority rate needs epsilon > 0");
    }
    let lam = sol.lambda;
    let dt = grid.dt();
    let n = grid.len();
    let mut law = ControlLaw {
        grid: *grid,
        lambda: lam,
        alpha: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        xbar: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
        n_clamped: 0,
    };
    // u = xbar - xi^+, so xbar - xi^- = u + 2 eps
    let mut u = 0.0f64;
    for k in 0..n {
        let t = grid.point(k);
        let [_, b, c] = sol.coefficients(t)?;
        let xbar = targets.xi_plus(t)? + u;
        let denom = u + 2.0 * eps;
        if denom.abs() < DENOMINATOR_FLOOR {
            return Err(Error::SingularDenominator {
                step: k,
                time: t,
                value: denom.abs(),
            });
        }
        let raw = (-(c / lam) * xbar - b / (2.0 * lam) - targets.xi_plus_derivative(t)?) / denom;
        let gamma = if raw > 0.0 {
            law.n_clamped += 1;
            0.0
        } else {
            raw
        };
        law.alpha.push((c / lam).max(0.0));
        law.gamma.push(gamma);
        law.xbar.push(xbar);
        law.b.push(b);
        law.c.push(c);
        u += gamma * denom * dt;
    }
    Ok(law)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::sample_noise;
    use crate::trajectory::TargetTrajectory;

    fn zero_targets(eps: f64) -> PerturbedTargets {
        PerturbedTargets::new(TargetTrajectory::constant(0.0, 0.0, 1.0).unwrap(), eps).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        assert_eq!(hamiltonian(0.0, 1.0).unwrap(), 0.0);
        assert!((hamiltonian(2.0, 0.001).unwrap() + 1000.0).abs() < 1e-9);
        assert_eq!(hamiltonian(0.37, 1.0).unwrap(), hamiltonian(-0.37, 1.0).unwrap());
        assert!(hamiltonian(1.0, 0.0).is_err());
        // brute-force minimisation over a control grid
        let (p, lam) = (2.0, 0.001);
        let best = (-200_000..=200_000)
            .map(|i| {
                let d = i as f64 * 0.01;
                d * p + lam * d * d
            })
            .fold(f64::INFINITY, f64::min);
        assert!((best - hamiltonian(p, lam).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn riccati_terminal_data_and_c_range() {
        let lam = 0.001;
        let problem = ControlProblem::new(lam, 0.0, 1.0, zero_targets(0.1), 1.0).unwrap();
        let sol = solve_riccati(&problem, 1e-4).unwrap();
        let last = sol.grid.n_steps();
        assert_eq!((sol.a[last], sol.b[last], sol.c[last]), (0.0, 0.0, 0.0));
        assert!(sol.b.iter().all(|&b| b == 0.0));
        for w in sol.c.windows(2) {
            assert!(w[0] >= w[1] - 1e-15);
        }
        assert!(sol.c.iter().all(|&c| (0.0..=lam.sqrt() + 1e-12).contains(&c)));
        assert!((sol.c[0] - 0.0316228).abs() < 1e-7);
    }

    #[test]
    fn riccati_rejects_coarse_steps() {
        let problem = ControlProblem::new(0.001, 0.0, 1.0, zero_targets(0.1), 1.0).unwrap();
        assert!(matches!(solve_riccati(&problem, 0.01), Err(Error::Config(_))));
    }

    #[test]
    fn value_and_beta_examples() {
        let lam = 0.001;
        let targets = PerturbedTargets::new(TargetTrajectory::sinusoid(0.5, 1.0, 0.0, 1.0).unwrap(), 0.1).unwrap();
        let problem = ControlProblem::new(lam, 0.0, 1.0, targets, 1.0).unwrap();
        let sol = solve_riccati(&problem, 1e-4).unwrap();
        assert_eq!(sol.value_function(1.0, 3.7).unwrap(), 0.0);
        assert_eq!(sol.optimal_beta(1.0, -2.0).unwrap(), 0.0);
        let [a, b, c] = sol.coefficients(0.3).unwrap();
        assert_eq!(sol.value_function(0.3, 0.0).unwrap(), a);
        let z = 0.8;
        assert!((sol.optimal_beta(0.3, z).unwrap() + (b + 2.0 * c * z) / (2.0 * lam)).abs() < 1e-12);
        assert!(matches!(sol.value_function(1.5, 0.0), Err(Error::Domain(_))));

        let zero = ControlProblem::new(lam, 0.0, 1.0, zero_targets(0.1), 1.0).unwrap();
        let sol = solve_riccati(&zero, 1e-4).unwrap();
        let [_, _, c] = sol.coefficients(0.4).unwrap();
        assert!((sol.optimal_beta(0.4, 1.0).unwrap() + c / lam).abs() < 1e-12);
    }

    #[test]
    fn control_law_reductions() {
        let lam = 0.001;
        let targets = zero_targets(0.1);
        let problem = ControlProblem::new(lam, 0.0, 1.0, targets.clone(), 1.0).unwrap();
        let sol = solve_riccati(&problem, 1e-4).unwrap();
        let grid = make_grid(0.0, 1.0, 1e-3).unwrap();
        let law = derive_control_law(&sol, &targets, &grid).unwrap();
        assert!((law.alpha[0] - 31.6228).abs() < 1e-4);
        assert!((law.gamma[0] + 15.8114).abs() < 1e-3);
        assert_eq!(*law.alpha.last().unwrap(), 0.0);
        assert!(law.alpha.iter().all(|&a| a >= 0.0));
        assert!(law.gamma.iter().all(|&g| g <= 0.0));
        assert!(derive_control_law(&sol, &zero_targets(0.0), &grid).is_err());
    }

    #[test]
    fn optimal_feedback_beats_no_control() {
        let lam = 0.001;
        let targets = PerturbedTargets::new(TargetTrajectory::sinusoid(0.5, 1.0, 0.0, 1.0).unwrap(), 0.1).unwrap();
        let problem = ControlProblem::new(lam, 0.0, 1.0, targets.clone(), 1.0).unwrap();
        let sol = solve_riccati(&problem, 1e-4).unwrap();
        let grid = make_grid(0.0, 1.0, 1e-3).unwrap();
        let cost = |controlled: bool| {
            let mut total = 0.0;
            for p in 0..1000 {
                let noise = sample_noise(&grid, 1, 8, p).unwrap();
                let mut z = 0.0;
                let mut j = 0.0;
                for k in 0..grid.n_steps() {
                    let t = grid.point(k);
                    let xi = targets.xi(t).unwrap();
                    let beta = if controlled {
                        sol.optimal_beta(t, z).unwrap()
                    } else {
                        0.0
                    };
                    j += ((z - xi).powi(2) + lam * beta * beta) * grid.dt();
                    z += beta * grid.dt() + noise.get(k, 0);
                }
                total += j;
            }
            total / 1000.0
        };
        let (with, without) = (cost(true), cost(false));
        assert!(with < without, "controlled {with} vs uncontrolled {without}");
    }
}
