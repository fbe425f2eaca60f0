//! Euler-Maruyama simulation of the `N`-particle system
//!
//! `X^i_{k+1} = X^i_k + b(t_k, X^i_k, mu^N_k) dt + sigma(t_k, X^i_k) xi^i_k sqrt(dt)`.
//!
//! Every drift at step `k` sees the step-`k` snapshot of the cloud; particles
//! are advanced in parallel against that read-only snapshot.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Cloud, DiffusionModel, DriftModel, InitialLaw, PolynomialForce, TimeGrid};
use crate::rng::particle_stream;
use crate::traj::TrajectoryEnsemble;
use crate::{Error, Result};

/// How pair forces of a Vlasov drift are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ForceEval {
    NaivePairwise,
    /// Uniform cells of the given side; only neighbouring cells are visited.
    CellList { radius: f64 },
    /// One-dimensional polynomial forces only: positions are sorted once per
    /// step and each force sum is read off windowed power sums, `O(log N)`
    /// per particle.
    SortedMoments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_particles: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    pub force_eval: ForceEval,
}

impl SimConfig {
    pub fn new(n_particles: usize, grid: TimeGrid, seed: u64) -> Self {
        Self { n_particles, grid, seed, force_eval: ForceEval::NaivePairwise }
    }

    pub fn with_force_eval(mut self, force_eval: ForceEval) -> Self {
        self.force_eval = force_eval;
        self
    }

    pub fn validate(&self, drift: &DriftModel) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidParameter("N must be >= 1".into()));
        }
        if let ForceEval::CellList { radius } = self.force_eval {
            let support = drift.interaction_radius().unwrap_or(0.0);
            if !(radius > 0.0 && radius.is_finite()) || radius < support {
                return Err(Error::InvalidParameter(format!(
                    "cell radius {radius} must be finite, positive and >= interaction support {support}"
                )));
            }
        }
        if self.force_eval == ForceEval::SortedMoments
            && !matches!(drift, DriftModel::VlasovPair { polynomial: Some(_), .. })
        {
            return Err(Error::InvalidParameter(
                "sorted-moment force evaluation needs a one-dimensional polynomial interaction".into(),
            ));
        }
        Ok(())
    }
}

/// Simulates `cfg.n_particles` paths; particle `i` uses noise stream `i`.
pub fn simulate_ensemble(
    drift: &DriftModel,
    diffusion: &DiffusionModel,
    init: &InitialLaw,
    cfg: &SimConfig,
) -> Result<TrajectoryEnsemble> {
    let streams: Vec<u64> = (0..cfg.n_particles as u64).collect();
    simulate_with_streams(drift, diffusion, init, cfg, &streams)
}

/// Simulates with an explicit stream id per particle. Each stream first
/// draws the particle's initial position, then its Brownian increments.
pub fn simulate_with_streams(
    drift: &DriftModel,
    diffusion: &DiffusionModel,
    init: &InitialLaw,
    cfg: &SimConfig,
    streams: &[u64],
) -> Result<TrajectoryEnsemble> {
    cfg.validate(drift)?;
    if streams.len() != cfg.n_particles {
        return Err(Error::DimensionMismatch { expected: cfg.n_particles, got: streams.len() });
    }
    let d = drift.dim();
    if init.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: init.dim() });
    }
    let mut rngs: Vec<ChaCha8Rng> = streams.iter().map(|&s| particle_stream(cfg.seed, s)).collect();
    let mut state = vec![0.0; cfg.n_particles * d];
    for (x, rng) in state.chunks_exact_mut(d).zip(rngs.iter_mut()) {
        init.sample_into(rng, x);
    }
    let initial = Cloud::new(d, state)?;
    simulate_from(drift, diffusion, initial, cfg, &mut rngs)
}

fn simulate_from(
    drift: &DriftModel,
    diffusion: &DiffusionModel,
    initial: Cloud,
    cfg: &SimConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<TrajectoryEnsemble> {
    let d = initial.dim();
    let n = initial.len();
    let steps = cfg.grid.n_steps();
    let dt = cfg.grid.dt();
    let sqrt_dt = dt.sqrt();
    let row = (steps + 1) * d;
    if !initial.coords().iter().all(|v| v.is_finite()) {
        return Err(Error::BlowUp(0));
    }

    let mut data = vec![0.0; n * row];
    let write_column = |data: &mut [f64], coords: &[f64], k: usize| {
        for (i, x) in coords.chunks_exact(d).enumerate() {
            data[i * row + k * d..i * row + (k + 1) * d].copy_from_slice(x);
        }
    };
    write_column(&mut data, initial.coords(), 0);

    let mut cloud = initial;
    let mut next = vec![0.0; n * d];
    for k in 0..steps {
        let t = cfg.grid.time(k);
        let cells = match (cfg.force_eval, drift) {
            (ForceEval::CellList { radius }, DriftModel::VlasovPair { .. }) => Some(CellList::build(&cloud, radius)),
            _ => None,
        };
        let moments = match (cfg.force_eval, drift) {
            (ForceEval::SortedMoments, DriftModel::VlasovPair { polynomial: Some(force), grad_v, .. }) => {
                Some((WindowMoments::build(cloud.coords(), force.coeffs.len() - 1), force, grad_v))
            }
            _ => None,
        };
        next.par_chunks_mut(d)
            .zip(rngs.par_iter_mut())
            .enumerate()
            .try_for_each_init(
                || (vec![0.0; d], Vec::new(), Vec::new()),
                |(xi, scratch, neigh), (i, (out, rng))| -> Result<()> {
                    let x = cloud.point(i);
                    let neighbours = cells.as_ref().map(|c| {
                        c.candidates(x, neigh);
                        neigh.as_slice()
                    });
                    match &moments {
                        Some((m, force, grad_v)) => {
                            grad_v(x, out);
                            out[0] = -out[0] - m.force_sum(force, x[0]) / n as f64;
                        }
                        None => drift.eval_into(t, x, &cloud, neighbours, out).map_err(|e| match e {
                            Error::DriftOverflow => Error::BlowUp(k),
                            other => other,
                        })?,
                    }
                    for v in xi.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    for (o, xv) in out.iter_mut().zip(x) {
                        *o = xv + *o * dt;
                    }
                    diffusion.apply_noise(t, x, xi, sqrt_dt, scratch, out);
                    if out.iter().all(|v| v.is_finite()) {
                        Ok(())
                    } else {
                        Err(Error::BlowUp(k))
                    }
                },
            )?;
        write_column(&mut data, &next, k + 1);
        let previous = std::mem::replace(&mut cloud, Cloud::new(d, std::mem::take(&mut next))?);
        next = previous.into_coords();
    }
    TrajectoryEnsemble::new(d, n, cfg.grid, cfg.seed, data)
}

/// Sorted one-dimensional positions with prefix sums of their powers.
struct WindowMoments {
    sorted: Vec<f64>,
    /// `prefix[i * (deg + 1) + q] = sum_{j < i} y_j^q`
    prefix: Vec<f64>,
    deg: usize,
}

impl WindowMoments {
    fn build(coords: &[f64], deg: usize) -> Self {
        let mut sorted = coords.to_vec();
        sorted.sort_by(f64::total_cmp);
        let w = deg + 1;
        let mut prefix = vec![0.0; (sorted.len() + 1) * w];
        for (i, y) in sorted.iter().enumerate() {
            let mut pw = 1.0;
            for q in 0..w {
                prefix[(i + 1) * w + q] = prefix[i * w + q] + pw;
                pw *= y;
            }
        }
        Self { sorted, prefix, deg }
    }

    /// `sum_j P(x - y_j)` over all `y_j` with `|x - y_j| < r`, expanding
    /// `(x - y)^p` binomially against the windowed power sums.
    fn force_sum(&self, force: &PolynomialForce, x: f64) -> f64 {
        let r = force.radius;
        let lo = self.sorted.partition_point(|y| *y <= x - r);
        let hi = self.sorted.partition_point(|y| *y < x + r);
        if lo >= hi {
            return 0.0;
        }
        let w = self.deg + 1;
        let s: Vec<f64> = (0..w).map(|q| self.prefix[hi * w + q] - self.prefix[lo * w + q]).collect();
        let mut total = 0.0;
        for (p, c) in force.coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            // sum_j (x - y_j)^p = sum_q C(p, q) x^{p-q} (-1)^q S_q
            let mut binom = 1.0;
            let mut acc = 0.0;
            for (q, sq) in s.iter().enumerate().take(p + 1) {
                let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * binom * x.powi((p - q) as i32) * sq;
                binom = binom * (p - q) as f64 / (q + 1) as f64;
            }
            total += c * acc;
        }
        total
    }
}

/// Uniform spatial hashing of a cloud.
struct CellList {
    side: f64,
    dim: usize,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl CellList {
    fn build(cloud: &Cloud, side: f64) -> Self {
        let dim = cloud.dim();
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (j, p) in cloud.points().enumerate() {
            let key: Vec<i64> = p.iter().map(|v| (v / side).floor() as i64).collect();
            cells.entry(key).or_default().push(j);
        }
        Self { side, dim, cells }
    }

    /// Indices of all points in the `3^d` cells around `x`, in cell order.
    fn candidates(&self, x: &[f64], out: &mut Vec<usize>) {
        out.clear();
        let base: Vec<i64> = x.iter().map(|v| (v / self.side).floor() as i64).collect();
        let mut key = base.clone();
        let total = 3usize.pow(self.dim as u32);
        for code in 0..total {
            let mut c = code;
            for (kc, b) in key.iter_mut().zip(&base) {
                *kc = b + (c % 3) as i64 - 1;
                c /= 3;
            }
            if let Some(idx) = self.cells.get(&key) {
                out.extend_from_slice(idx);
            }
        }
    }
}
