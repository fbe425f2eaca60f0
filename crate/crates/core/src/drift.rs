//! Drift estimation by time-space smoothing of the increment measure.
//!
//! `pi_hat(t0, x0) = N^{-1} sum_i sum_k H_{h1}(t0 - t_k) K_{h2}(x0 - X^i_k) (X^i_{k+1} - X^i_k)`
//! estimates `b(t0, x0, mu_t0) mu_t0(x0)`, and the drift estimate is the
//! quotient `pi_hat / max(mu_hat, varpi3)`.
//!
//! Evaluating a whole bandwidth grid is separable: for each observation time
//! the spatial sums `G_k(h2) = sum_i K_{h2}(x0 - X^i_k) dX^i_k` are formed
//! once, then every `h1` reuses them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{density_at, density_gl};
use crate::gl::{gl_select, BandwidthGrid, GlDiagnostics};
use crate::kernels::{product_kernel, scaled_unchecked, KernelSpec};
use crate::traj::TrajectoryEnsemble;
use crate::{Error, Result};

/// Calibration constants of the variance terms and the denominator floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftWeights {
    pub varpi1: f64,
    pub varpi2: f64,
    /// `None` uses a quarter of the pilot density at the largest density
    /// bandwidth.
    pub varpi3: Option<f64>,
}

impl Default for DriftWeights {
    fn default() -> Self {
        Self { varpi1: 1.0, varpi2: 1.0, varpi3: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimateReport {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub pi_hat: Vec<f64>,
    pub mu_hat: f64,
    pub b_hat: Vec<f64>,
    pub h1: f64,
    pub h2: f64,
    pub h: f64,
    pub varpi1: f64,
    pub varpi2: f64,
    pub varpi3: f64,
    pub density_gl: GlDiagnostics,
    pub pi_gl: GlDiagnostics,
}

/// `varpi2 |H x K|_2^2 log N / (N h1 h2^d)`.
pub fn pi_variance_term(n: usize, h1: f64, h2: f64, hk: &KernelSpec, varpi2: f64) -> f64 {
    let nf = n as f64;
    let d = hk.dim() as i32 - 1;
    varpi2 * hk.l2_norm_sq() * nf.ln() / (nf * h1 * h2.powi(d))
}

/// Checks that `t0` is interior and the window of `H_{h1}` around `t0`
/// stays inside `[0, T]`.
pub fn check_time_window(ens: &TrajectoryEnsemble, t0: f64, h1: f64, time_kernel: &KernelSpec) -> Result<()> {
    let t_end = ens.grid().t_end();
    if !(t0 > 0.0 && t0 < t_end) {
        return Err(Error::TimeOutOfRange { t: t0, t_end });
    }
    let (lo, hi) = time_kernel.factors()[0].support();
    let eps = 1e-12 * t_end;
    if t0 - h1 * hi < -eps || t0 - h1 * lo > t_end + eps {
        return Err(Error::Boundary);
    }
    Ok(())
}

/// `pi_hat` at a single bandwidth pair with the product kernel `H x K`.
pub fn pi_hat_at(ens: &TrajectoryEnsemble, t0: f64, x0: &[f64], h1: f64, h2: f64, hk: &KernelSpec) -> Result<Vec<f64>> {
    let (h, k) = hk.split_first()?;
    let table = pi_hat_table(ens, t0, x0, &[h1], &[h2], &h, &k)?;
    Ok(table.into_iter().next().and_then(|r| r.into_iter().next()).expect("one entry"))
}

/// `pi_hat` for every pair in `h1s x h2s`, indexed `[i1][i2]`.
pub fn pi_hat_table(
    ens: &TrajectoryEnsemble,
    t0: f64,
    x0: &[f64],
    h1s: &[f64],
    h2s: &[f64],
    time_kernel: &KernelSpec,
    space_kernel: &KernelSpec,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let d = ens.dim();
    if time_kernel.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: time_kernel.dim() });
    }
    if space_kernel.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: space_kernel.dim() });
    }
    if x0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x0.len() });
    }
    if h1s.is_empty() || h2s.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if !h1s.iter().chain(h2s).all(|h| *h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter("bandwidths must be finite and > 0".into()));
    }
    for &h1 in h1s {
        check_time_window(ens, t0, h1, time_kernel)?;
    }

    let grid = ens.grid();
    let steps = grid.n_steps();
    let h1_max = h1s.iter().cloned().fold(0.0, f64::max);
    let reach = h2s.iter().cloned().fold(0.0, f64::max) * space_kernel.support_radius();
    let (tlo, thi) = time_kernel.factors()[0].support();
    let t_from = t0 - h1_max * thi;
    let t_to = t0 - h1_max * tlo;
    let ks: Vec<usize> = (0..steps).filter(|&k| {
        let t = grid.time(k);
        t >= t_from - 1e-12 && t <= t_to + 1e-12
    }).collect();

    // G_k(h2) for each retained step, summed over particles in index order
    let spatial: Vec<Vec<f64>> = ks
        .par_iter()
        .map(|&k| {
            let mut acc = vec![0.0; h2s.len() * d];
            let mut u = vec![0.0; d];
            for i in 0..ens.n_particles() {
                let x = ens.position(i, k);
                let mut inside = true;
                for ((uc, a), b) in u.iter_mut().zip(x0).zip(x) {
                    *uc = a - b;
                    inside &= uc.abs() <= reach;
                }
                if !inside {
                    continue;
                }
                let next = ens.position(i, k + 1);
                for (j, &h2) in h2s.iter().enumerate() {
                    let w = scaled_unchecked(space_kernel, h2, &u);
                    if w != 0.0 {
                        for c in 0..d {
                            acc[j * d + c] += w * (next[c] - x[c]);
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let n = ens.n_particles() as f64;
    let out = h1s
        .iter()
        .map(|&h1| {
            let mut table = vec![vec![0.0; d]; h2s.len()];
            for (g, &k) in spatial.iter().zip(&ks) {
                let w = scaled_unchecked(time_kernel, h1, &[t0 - grid.time(k)]);
                if w == 0.0 {
                    continue;
                }
                for (j, row) in table.iter_mut().enumerate() {
                    for c in 0..d {
                        row[c] += w * g[j * d + c];
                    }
                }
            }
            for row in &mut table {
                row.iter_mut().for_each(|v| *v /= n);
            }
            table
        })
        .collect();
    Ok(out)
}

/// Two-bandwidth GL drift estimate at `(t0, x0)`.
#[allow(clippy::too_many_arguments)]
pub fn drift_gl(
    ens: &TrajectoryEnsemble,
    t0: f64,
    x0: &[f64],
    grid2: &BandwidthGrid,
    grid1: &BandwidthGrid,
    time_kernel: &KernelSpec,
    space_kernel: &KernelSpec,
    weights: DriftWeights,
) -> Result<DriftEstimateReport> {
    if grid2.dims() != 2 {
        return Err(Error::GridMismatch("drift grid must be two-dimensional".into()));
    }
    if !(weights.varpi2 > 0.0) {
        return Err(Error::InvalidParameter(format!("varpi2 must be > 0, got {}", weights.varpi2)));
    }
    if let Some(v3) = weights.varpi3 {
        if !(v3 >= 0.0) {
            return Err(Error::InvalidParameter(format!("varpi3 must be >= 0, got {v3}")));
        }
    }
    let cloud = ens.empirical_cloud(t0)?;
    let mut density = density_gl(&cloud, x0, grid1, space_kernel, weights.varpi1)?;
    density.t0 = Some(t0);

    let mut h1s: Vec<f64> = grid2.entries().iter().map(|e| e[0]).collect();
    let mut h2s: Vec<f64> = grid2.entries().iter().map(|e| e[1]).collect();
    for v in [&mut h1s, &mut h2s] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let table = pi_hat_table(ens, t0, x0, &h1s, &h2s, time_kernel, space_kernel)?;
    let hk = product_kernel(time_kernel, space_kernel)?;
    let n = ens.n_particles();
    let mut estimates = Vec::with_capacity(grid2.len());
    let mut variance = Vec::with_capacity(grid2.len());
    for e in grid2.entries() {
        let i1 = h1s.binary_search_by(|v| v.total_cmp(&e[0])).expect("h1 present");
        let i2 = h2s.binary_search_by(|v| v.total_cmp(&e[1])).expect("h2 present");
        estimates.push(table[i1][i2].clone());
        variance.push(pi_variance_term(n, e[0], e[1], &hk, weights.varpi2));
    }
    let pi_gl = gl_select(grid2, &estimates, &variance)?;

    let varpi3 = match weights.varpi3 {
        Some(v) => v,
        None => 0.25 * density_at(&cloud, x0, grid1.largest()[0], space_kernel)?,
    };
    let pi_hat = pi_gl.chosen_estimate().to_vec();
    let b_hat = quotient(&pi_hat, density.value, varpi3)?;
    Ok(DriftEstimateReport {
        t0,
        x0: x0.to_vec(),
        mu_hat: density.value,
        b_hat,
        h1: pi_gl.chosen_bandwidth()[0],
        h2: pi_gl.chosen_bandwidth()[1],
        h: density.h,
        varpi1: weights.varpi1,
        varpi2: weights.varpi2,
        varpi3,
        density_gl: density.gl,
        pi_gl,
        pi_hat,
    })
}

/// `pi / max(mu, varpi3)`; a nonpositive denominator is an error.
pub fn quotient(pi: &[f64], mu: f64, varpi3: f64) -> Result<Vec<f64>> {
    let denom = mu.max(varpi3);
    if !(denom > 0.0) {
        return Err(Error::DegenerateDenominator);
    }
    Ok(pi.iter().map(|p| p / denom).collect())
}
