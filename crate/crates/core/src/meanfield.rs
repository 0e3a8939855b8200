//! Mean-field limits of the banking models.
//!
//! The two-mechanism limit is integrated in deviation form: with
//! `u = xbar - xi^+` and `v = x - xi^+`,
//!
//! ```text
//! u_{k+1} = u_k + gamma_k (u_k + 2 eps) dt
//! v_{k+1} = v_k + [alpha_k (u_k - v_k) + gamma_k (u_k + 2 eps)] dt + sigma_k dW_k
//! ```
//!
//! which is the explicit Euler scheme for the original equations with `d xi^+`
//! integrated exactly. For `eps = 0` the auxiliary mean stays on `xi` and `x`
//! does not depend on `gamma`, both bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::model::RateFn;
use crate::sde::{NoiseBlock, TimeGrid};
use crate::trajectory::{PerturbedTargets, VolSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub t: f64,
    /// Mean-bank log reserves.
    pub x: f64,
    /// Auxiliary mean process.
    pub xbar: f64,
}

fn check_noise(grid: &TimeGrid, noise: &NoiseBlock) -> Result<()> {
    if noise.n_steps() != grid.n_steps() || noise.n_banks() < 1 {
        return Err(Error::Internal(format!(
            "mean-field noise is {}x{}, expected {}x1",
            noise.n_steps(),
            noise.n_banks(),
            grid.n_steps()
        )));
    }
    Ok(())
}

/// Euler path of `dY = -alpha Y dt + sigma dW`, `Y_0 = 0`, on column 0 of `noise`.
pub fn simulate_meanfield_ou(alpha: f64, sigma: f64, grid: &TimeGrid, noise: &NoiseBlock) -> Result<Vec<f64>> {
    simulate_meanfield_ou_from(0.0, alpha, sigma, grid, noise)
}

/// As [`simulate_meanfield_ou`] with an arbitrary starting value.
pub fn simulate_meanfield_ou_from(
    y0: f64,
    alpha: f64,
    sigma: f64,
    grid: &TimeGrid,
    noise: &NoiseBlock,
) -> Result<Vec<f64>> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return config(format!("alpha must be finite and >= 0, got {alpha}"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return config(format!("volatility must be finite and >= 0, got {sigma}"));
    }
    check_noise(grid, noise)?;
    let dt = grid.dt();
    let mut path = Vec::with_capacity(grid.len());
    let mut y = y0;
    path.push(y);
    for k in 0..grid.n_steps() {
        y += -alpha * y * dt + sigma * noise.get(k, 0);
        path.push(y);
    }
    Ok(path)
}

/// Co-integrates the mean bank `x` and the auxiliary mean `xbar`, both started
/// at `xi^+_{t0}`.
pub fn simulate_meanfield_two(
    targets: &PerturbedTargets,
    alpha: &RateFn,
    gamma: &RateFn,
    vol: &VolSchedule,
    grid: &TimeGrid,
    noise: &NoiseBlock,
) -> Result<Vec<MeanFieldState>> {
    if !alpha.all_non_negative() {
        return config("alpha_t must be >= 0 at every sample");
    }
    if !gamma.all_non_positive() {
        return config("gamma_t must be <= 0 at every sample");
    }
    check_noise(grid, noise)?;
    let dt = grid.dt();
    let two_eps = 2.0 * targets.epsilon();
    let (mut u, mut v) = (0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(grid.len());
    let t0 = grid.t0();
    let xp = targets.xi_plus(t0)?;
    out.push(MeanFieldState {
        t: t0,
        x: xp + v,
        xbar: xp + u,
    });
    for k in 0..grid.n_steps() {
        let t = grid.point(k);
        let a = alpha.eval(t);
        let g = gamma.eval(t);
        let s = vol.eval(t)?;
        let authority = g * (u + two_eps) * dt;
        let v_next = v + a * (u - v) * dt + authority + s * noise.get(k, 0);
        u += authority;
        v = v_next;
        let t_next = grid.point(k + 1);
        let xp = targets.xi_plus(t_next)?;
        out.push(MeanFieldState {
            t: t_next,
            x: xp + v,
            xbar: xp + u,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{make_grid, sample_noise};
    use crate::trajectory::TargetTrajectory;

    #[test]
    fn ou_examples() {
        let grid = make_grid(0.0, 1.0, 1e-4).unwrap();
        let noise = sample_noise(&grid, 1, 4, 0).unwrap();
        let p = simulate_meanfield_ou(5.0, 0.0, &grid, &noise).unwrap();
        assert!(p.iter().all(|&y| y == 0.0));

        let p = simulate_meanfield_ou_from(1.0, 1.0, 0.0, &grid, &noise).unwrap();
        assert!((p[grid.n_steps()] - (-1.0f64).exp()).abs() < 1e-4);

        let p = simulate_meanfield_ou(0.0, 2.0, &grid, &noise).unwrap();
        let mut acc = 0.0;
        for k in 0..grid.n_steps() {
            acc += 2.0 * noise.get(k, 0);
            assert!((p[k + 1] - acc).abs() < 1e-12);
        }
        assert!(simulate_meanfield_ou(-1.0, 1.0, &grid, &noise).is_err());
    }

    #[test]
    fn gamma_zero_tracks_xi_plus_exactly() {
        let grid = make_grid(0.0, 1.0, 1e-3).unwrap();
        let noise = sample_noise(&grid, 1, 4, 0).unwrap();
        let targets = PerturbedTargets::new(TargetTrajectory::sinusoid(0.5, 1.0, 0.0, 1.0).unwrap(), 0.1).unwrap();
        let path = simulate_meanfield_two(
            &targets,
            &RateFn::Constant(3.0),
            &RateFn::Constant(0.0),
            &VolSchedule::constant(1.0).unwrap(),
            &grid,
            &noise,
        )
        .unwrap();
        for s in &path {
            assert_eq!(s.xbar, targets.xi_plus(s.t).unwrap());
        }
    }

    #[test]
    fn mean_field_rejects_bad_signs() {
        let grid = make_grid(0.0, 1.0, 1e-2).unwrap();
        let noise = sample_noise(&grid, 1, 4, 0).unwrap();
        let targets = PerturbedTargets::new(TargetTrajectory::constant(1.0, 0.0, 1.0).unwrap(), 0.1).unwrap();
        let vol = VolSchedule::constant(1.0).unwrap();
        assert!(simulate_meanfield_two(
            &targets,
            &RateFn::Constant(1.0),
            &RateFn::Constant(0.5),
            &vol,
            &grid,
            &noise
        )
        .is_err());
        assert!(simulate_meanfield_two(
            &targets,
            &RateFn::Constant(-1.0),
            &RateFn::Constant(0.0),
            &vol,
            &grid,
            &noise
        )
        .is_err());
    }
}
