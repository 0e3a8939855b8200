//! Time grids, reproducible Wiener increments and the explicit Euler update.
//!
//! Every Gaussian stream is addressed by `(seed, path_index, bank)`. The seed
//! selects a ChaCha8 key, the path index selects the ChaCha stream and the bank
//! index selects a disjoint window of the stream's block counter, so a column
//! of increments never depends on how many other columns were drawn, in which
//! order, or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, ensure_finite, Error, Result};

/// Relative tolerance used when checking that `dt` divides `t1 - t0`.
const GRID_DIVISIBILITY_TOL: f64 = 1e-9;

/// Words (32-bit) of ChaCha output reserved for each bank column.
const WORDS_PER_COLUMN: u128 = 1 << 40;

/// Uniform time grid `t_k = t0 + k * dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid point `k`. The last point is pinned to `t1`.
    pub fn point(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.t1
        } else {
            self.t0 + k as f64 * self.dt
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |k| self.point(k))
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 - self.dt * 1e-9 && t <= self.t1 + self.dt * 1e-9
    }

    /// Index of the grid cell `[t_k, t_{k+1})` containing `t`, clamped to the grid.
    pub fn cell_of(&self, t: f64) -> usize {
        let raw = ((t - self.t0) / self.dt + 1e-9).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.n_steps)
        }
    }
}

/// Builds the grid on `[t0, t1]` with step `dt`; `dt` must divide the interval.
pub fn make_grid(t0: f64, t1: f64, dt: f64) -> Result<TimeGrid> {
    ensure_finite("t0", t0)?;
    ensure_finite("t1", t1)?;
    ensure_finite("dt", dt)?;
    if dt <= 0.0 {
        return config(format!("time step must be positive, got {dt}"));
    }
    if t1 <= t0 {
        return config(format!("grid end {t1} must exceed start {t0}"));
    }
    let ratio = (t1 - t0) / dt;
    let n_steps = ratio.round();
    if n_steps < 1.0 || (ratio - n_steps).abs() > GRID_DIVISIBILITY_TOL * n_steps.max(1.0) {
        return config(format!("time step {dt} does not divide the interval [{t0}, {t1}]"));
    }
    Ok(TimeGrid {
        t0,
        t1,
        dt,
        n_steps: n_steps as usize,
    })
}

/// Wiener increments for one path: `n_steps` rows by `n_banks` columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlock {
    increments: Vec<f64>,
    n_steps: usize,
    n_banks: usize,
    seed: u64,
    path_index: u64,
}

impl NoiseBlock {
    /// An empty block, to be filled with [`fill_noise`].
    pub fn empty() -> NoiseBlock {
        NoiseBlock {
            increments: Vec::new(),
            n_steps: 0,
            n_banks: 0,
            seed: 0,
            path_index: 0,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_banks(&self) -> usize {
        self.n_banks
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Increments of all banks over step `k` (from `t_k` to `t_{k+1}`).
    pub fn row(&self, k: usize) -> &[f64] {
        &self.increments[k * self.n_banks..(k + 1) * self.n_banks]
    }

    pub fn get(&self, k: usize, bank: usize) -> f64 {
        self.increments[k * self.n_banks + bank]
    }

    /// Column `bank` as an owned vector.
    pub fn column(&self, bank: usize) -> Vec<f64> {
        (0..self.n_steps).map(|k| self.get(k, bank)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.increments
    }

    /// Reorders bank columns: column `dst` of the result is column `perm[dst]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<NoiseBlock> {
        if perm.len() != self.n_banks {
            return Err(Error::Internal(format!(
                "permutation of length {} for {} columns",
                perm.len(),
                self.n_banks
            )));
        }
        let mut out = self.clone();
        for k in 0..self.n_steps {
            for (dst, &src) in perm.iter().enumerate() {
                out.increments[k * self.n_banks + dst] = self.increments[k * self.n_banks + src];
            }
        }
        Ok(out)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a master seed and a list of tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    let mut out = splitmix64(&mut state);
    for &tag in tags {
        state ^= tag.wrapping_mul(0xd6e8_feb8_6659_fd93);
        out = splitmix64(&mut state) ^ out.rotate_left(17);
    }
    out
}

fn chacha_key(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Standard-normal stream for one `(seed, path_index, bank)` column.
pub fn column_rng(seed: u64, path_index: u64, bank: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(chacha_key(seed));
    rng.set_stream(path_index);
    rng.set_word_pos(bank as u128 * WORDS_PER_COLUMN);
    rng
}

/// Draws the increments `dW ~ N(0, dt)` of every bank over `grid` for one path.
pub fn sample_noise(grid: &TimeGrid, n_banks: usize, seed: u64, path_index: u64) -> Result<NoiseBlock> {
    let mut block = NoiseBlock::empty();
    fill_noise(&mut block, grid, n_banks, seed, path_index)?;
    Ok(block)
}

/// Refills `block` in place, reusing its allocation.
pub fn fill_noise(block: &mut NoiseBlock, grid: &TimeGrid, n_banks: usize, seed: u64, path_index: u64) -> Result<()> {
    if n_banks == 0 {
        return config("noise needs at least one bank column");
    }
    let n_steps = grid.n_steps;
    let scale = grid.dt.sqrt();
    block.increments.resize(n_steps * n_banks, 0.0);
    block.n_steps = n_steps;
    block.n_banks = n_banks;
    block.seed = seed;
    block.path_index = path_index;
    for bank in 0..n_banks {
        let mut rng = column_rng(seed, path_index, bank);
        let mut idx = bank;
        for _ in 0..n_steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            block.increments[idx] = scale * z;
            idx += n_banks;
        }
    }
    Ok(())
}

/// Sequential access to Wiener increments, step by step.
///
/// Implementors must return the same value for `(step, bank)` as
/// [`sample_noise`] would place in that cell, provided each bank's increments
/// are requested in increasing step order.
pub trait IncrementSource {
    fn increment(&mut self, step: usize, bank: usize) -> f64;
}

impl IncrementSource for NoiseBlock {
    fn increment(&mut self, step: usize, bank: usize) -> f64 {
        self.get(step, bank)
    }
}

impl IncrementSource for &NoiseBlock {
    fn increment(&mut self, step: usize, bank: usize) -> f64 {
        self.get(step, bank)
    }
}

/// Lazily generated counterpart of [`NoiseBlock`]: one ChaCha stream per bank,
/// drawn on demand. Columns of banks that are never queried cost nothing.
pub struct NoiseStreams {
    rngs: Vec<ChaCha8Rng>,
    scale: f64,
}

impl NoiseStreams {
    pub fn new(grid: &TimeGrid, n_banks: usize, seed: u64, path_index: u64) -> Result<Self> {
        if n_banks == 0 {
            return config("noise needs at least one bank column");
        }
        Ok(NoiseStreams {
            rngs: (0..n_banks).map(|bank| column_rng(seed, path_index, bank)).collect(),
            scale: grid.dt.sqrt(),
        })
    }
}

impl IncrementSource for NoiseStreams {
    fn increment(&mut self, _step: usize, bank: usize) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rngs[bank]);
        self.scale * z
    }
}

/// One explicit Euler step: `state + drift * dt + sigma * dW`, componentwise.
pub fn euler_step(state: &[f64], drift: &[f64], sigma: f64, dw: &[f64], dt: f64) -> Result<Vec<f64>> {
    if state.len() != drift.len() || state.len() != dw.len() {
        return Err(Error::Internal(format!(
            "euler_step length mismatch: state {}, drift {}, dW {}",
            state.len(),
            drift.len(),
            dw.len()
        )));
    }
    if !(sigma >= 0.0) {
        return config(format!("volatility must be non-negative, got {sigma}"));
    }
    Ok(state
        .iter()
        .zip(drift)
        .zip(dw)
        .map(|((x, a), w)| x + a * dt + sigma * w)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = make_grid(0.0, 1.0, 1e-4).unwrap();
        assert_eq!(g.n_steps(), 10_000);
        assert_eq!(g.point(g.n_steps()), 1.0);
        assert!((g.point(5000) - 0.5).abs() < 1e-15);

        let g = make_grid(0.0, 1.0, 0.5).unwrap();
        assert_eq!(g.points().collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);

        let g = make_grid(0.25, 1.25, 0.25).unwrap();
        assert_eq!(g.n_steps(), 4);
        assert_eq!(g.points().collect::<Vec<_>>(), vec![0.25, 0.5, 0.75, 1.0, 1.25]);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(make_grid(1.0, 0.0, 0.1).is_err());
        assert!(make_grid(0.0, 1.0, 0.0).is_err());
        assert!(make_grid(0.0, 1.0, -0.1).is_err());
        assert!(make_grid(0.0, f64::NAN, 0.1).is_err());
        assert!(make_grid(0.0, f64::INFINITY, 0.1).is_err());
        assert!(make_grid(0.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn grid_multiplication_form_does_not_drift() {
        let g = make_grid(0.0, 1.0, 1e-4).unwrap();
        for k in (0..=10_000).step_by(997) {
            assert!((g.point(k) - k as f64 * 1e-4).abs() <= f64::EPSILON * 2.0);
        }
    }

    #[test]
    fn noise_is_deterministic_and_order_free() {
        let g = make_grid(0.0, 0.01, 1e-4).unwrap();
        let a = sample_noise(&g, 3, 42, 7).unwrap();
        let b = sample_noise(&g, 3, 42, 7).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        // a column does not depend on how many columns are drawn
        let wide = sample_noise(&g, 5, 42, 7).unwrap();
        for bank in 0..3 {
            assert_eq!(a.column(bank), wide.column(bank));
        }
        let other = sample_noise(&g, 3, 42, 8).unwrap();
        assert_ne!(a.as_slice(), other.as_slice());
    }

    #[test]
    fn lazy_streams_match_block() {
        let g = make_grid(0.0, 0.05, 1e-4).unwrap();
        let block = sample_noise(&g, 4, 9, 3).unwrap();
        let mut lazy = NoiseStreams::new(&g, 4, 9, 3).unwrap();
        for k in 0..g.n_steps() {
            for bank in 0..4 {
                assert_eq!(lazy.increment(k, bank).to_bits(), block.get(k, bank).to_bits());
            }
        }
    }

    #[test]
    fn noise_rejects_zero_banks() {
        let g = make_grid(0.0, 1.0, 0.1).unwrap();
        assert!(matches!(sample_noise(&g, 0, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn euler_examples() {
        assert_eq!(euler_step(&[0.0], &[0.0], 1.0, &[0.3], 0.7).unwrap(), vec![0.3]);
        assert_eq!(euler_step(&[1.0], &[-2.0], 0.0, &[123.0], 0.5).unwrap(), vec![0.0]);
        let out = euler_step(&[1.0, 0.0], &[-1.0, 1.0], 1.0, &[0.1, -0.1], 0.1).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15 && out[1].abs() < 1e-15);
        assert!(matches!(
            euler_step(&[1.0], &[1.0, 2.0], 1.0, &[0.0], 0.1),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, &[0, 0]);
        let b = derive_seed(1, &[0, 1]);
        let c = derive_seed(1, &[1, 0]);
        let d = derive_seed(2, &[0, 0]);
        assert!(a != b && a != c && b != c && a != d);
        assert_eq!(a, derive_seed(1, &[0, 0]));
    }
}
