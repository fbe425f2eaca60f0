//! Experiment orchestration: single runs, Monte Carlo replication over
//! seeds and particle counts, and the acceptance-suite entry points.

use std::f64::consts::PI;
use std::path::Path;

use mckean::density::density_gl;
use mckean::diagnostics::{fit_tail_envelope, rate_slope, w1_to_cdf, LinearFit, TailEnvelope};
use mckean::drift::{drift_gl, quotient, DriftWeights};
use mckean::interaction::{
    drift_field, estimate_grad_v, estimate_grad_w, forward_transform, fourier_quotient, FieldBandwidths, FourierField,
    Lattice, LinearForm, SpatialField,
};
use mckean::model::{MeanFieldOu, PolynomialForce};
use mckean::quadrature::GaussLegendre;
use mckean::rng::replicate_seed;
use mckean::simulator::simulate_ensemble;
use mckean::traj::TrajectoryEnsemble;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CliError, Result};
use crate::experiment::{ExperimentConfig, Interaction, ModelKind, TestFunction};
use crate::report::OutputDir;

/// Environment variable holding the worker count (0 or unset: one per core).
pub const WORKERS_ENV: &str = "MCKEAN_WORKERS";

pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Invalid(format!("{WORKERS_ENV} must be a count, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Invalid(format!("cannot start worker pool: {e}")))
}

/// Runs `f(j, seed_j)` for every replicate, in parallel, and returns the
/// results in replicate order. The first failing replicate (by index) is
/// reported with its index, `N` and seed.
pub fn replicated<T, F>(n: usize, base_seed: u64, replicates: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = (0..replicates)
        .into_par_iter()
        .map(|j| {
            let seed = replicate_seed(base_seed, n as u64, j as u64);
            f(j, seed).map_err(|e| CliError::Replicate { replicate: j, n, seed, source: Box::new(e) })
        })
        .collect();
    results.into_iter().collect()
}

pub fn simulate(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<TrajectoryEnsemble> {
    let (drift, diffusion, init) = cfg.build_model()?;
    let sim = cfg.sim_config(&drift, n, seed)?;
    Ok(simulate_ensemble(&drift, &diffusion, &init, &sim)?)
}

/// Law of the Euler scheme's large-N limit at the grid time nearest `t`.
pub fn euler_law(p: &MeanFieldOu, ens_dt: f64, k: usize) -> Result<(f64, f64)> {
    Ok(p.euler_moments(ens_dt, k)?)
}

fn gaussian_density(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
}

/// Oracle targets at `(t0, x0)` for a one-dimensional mean-field OU run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointTruth {
    pub density: f64,
    pub drift: f64,
}

fn point_truth(cfg: &ExperimentConfig, ens: &TrajectoryEnsemble) -> Result<Option<PointTruth>> {
    let Some(p) = cfg.oracle() else { return Ok(None) };
    let grid = ens.grid();
    let k = grid.nearest_index(cfg.estimate.t0)?;
    let (m, v) = euler_law(&p, grid.dt(), k)?;
    let x = cfg.estimate.x0[0];
    Ok(Some(PointTruth { density: gaussian_density(x, m, v), drift: -p.theta * x - p.lambda * (x - m) }))
}

fn drift_weights(cfg: &ExperimentConfig) -> DriftWeights {
    DriftWeights { varpi1: cfg.estimate.varpi1, varpi2: cfg.estimate.varpi2, varpi3: cfg.estimate.varpi3 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub kind: String,
    pub n: usize,
    pub seed: u64,
    pub t0: f64,
    pub x0: Vec<f64>,
    pub value: f64,
    pub h: f64,
    pub truth: Option<f64>,
}

pub fn estimate_density(cfg: &ExperimentConfig, ens: &TrajectoryEnsemble) -> Result<DensityRecord> {
    let n = ens.n_particles();
    let cloud = ens.empirical_cloud(cfg.estimate.t0)?;
    let rep = density_gl(&cloud, &cfg.estimate.x0, &cfg.density_grid(n)?, &cfg.space_kernel()?, cfg.estimate.varpi1)?;
    Ok(DensityRecord {
        kind: "density".into(),
        n,
        seed: ens.seed(),
        t0: cfg.estimate.t0,
        x0: cfg.estimate.x0.clone(),
        value: rep.value,
        h: rep.h,
        truth: point_truth(cfg, ens)?.map(|t| t.density),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub kind: String,
    pub n: usize,
    pub seed: u64,
    pub t0: f64,
    pub x0: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub mu_hat: f64,
    pub h1: f64,
    pub h2: f64,
    pub h: f64,
    pub varpi3: f64,
    pub truth: Option<f64>,
}

pub fn estimate_drift(cfg: &ExperimentConfig, ens: &TrajectoryEnsemble) -> Result<DriftRecord> {
    let n = ens.n_particles();
    let k = cfg.space_kernel()?;
    let rep = drift_gl(
        ens,
        cfg.estimate.t0,
        &cfg.estimate.x0,
        &cfg.drift_grid(n)?,
        &cfg.density_grid(n)?,
        &cfg.time_kernel()?,
        &k,
        drift_weights(cfg),
    )?;
    Ok(DriftRecord {
        kind: "drift".into(),
        n,
        seed: ens.seed(),
        t0: rep.t0,
        x0: rep.x0,
        b_hat: rep.b_hat,
        mu_hat: rep.mu_hat,
        h1: rep.h1,
        h2: rep.h2,
        h: rep.h,
        varpi3: rep.varpi3,
        truth: point_truth(cfg, ens)?.map(|t| t.drift),
    })
}

/// True interaction force of the configured model on `lattice`, if known.
fn true_grad_w(cfg: &ExperimentConfig, lattice: Lattice) -> Option<SpatialField> {
    let ModelKind::Vlasov { interaction, .. } = &cfg.model.kind else { return None };
    match interaction {
        Interaction::None => Some(SpatialField::zeros(lattice, cfg.model.dim)),
        Interaction::Bump { strength, radius } => {
            let f = mckean::model::bump_interaction(*strength, *radius);
            Some(SpatialField::from_fn(lattice, cfg.model.dim, |x, out| f(x, out)))
        }
        Interaction::Quadratic { .. } => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub kind: String,
    pub n: usize,
    pub seed: u64,
    pub varpi: f64,
    pub h: f64,
    pub h1: f64,
    pub h2: f64,
    pub retained_fraction: f64,
    pub max_imaginary: f64,
    /// `int |grad W_hat|^2` over the box.
    pub norm_sq: f64,
    /// `int |grad W_hat - grad W|^2` over the box, when the truth is known.
    pub error_sq: Option<f64>,
    /// `int_{|x| <= r} |grad V_hat - grad V|^2` at the middle active time.
    pub grad_v_error_sq: Option<f64>,
}

/// One interaction estimate together with its lattice fields.
#[derive(Debug, Clone)]
pub struct InteractionOutcome {
    pub record: InteractionRecord,
    pub grad_w_hat: SpatialField,
    pub grad_w: Option<SpatialField>,
    pub grad_v_hat: SpatialField,
}

pub fn interaction_bandwidths(cfg: &ExperimentConfig, n: usize) -> FieldBandwidths {
    let i = &cfg.interaction;
    let s = (n as f64 / i.reference_n as f64).powf(-0.2);
    FieldBandwidths { h: i.h * s, h1: i.h1 * s, h2: i.h2 * s }
}

pub fn interaction_threshold(cfg: &ExperimentConfig, n: usize) -> f64 {
    cfg.interaction.varpi_scale * (n as f64).powf(-0.25)
}

pub fn estimate_interaction(cfg: &ExperimentConfig, ens: &TrajectoryEnsemble) -> Result<InteractionOutcome> {
    cfg.validate_interaction()?;
    let i = &cfg.interaction;
    let n = ens.n_particles();
    let lattice = Lattice::new(cfg.model.dim, i.half_width, i.points)?;
    let form = LinearForm::new(i.weight, ens.grid())?;
    let bw = interaction_bandwidths(cfg, n);
    let varpi = interaction_threshold(cfg, n);
    let active = form.active();
    let field = drift_field(ens, &lattice, &active, bw, &cfg.time_kernel()?, &cfg.space_kernel()?, i.varpi_prime, i.radius)?;
    let rep = estimate_grad_w(ens, &field, &form, varpi)?;

    let mid = active.len() / 2;
    let grad_v_hat = estimate_grad_v(&field.drift[mid], &rep.grad_w_hat, &field.density[mid])?;
    let grad_w = true_grad_w(cfg, lattice);
    let error_sq = grad_w.as_ref().map(|t| rep.grad_w_hat.l2_distance_sq(t)).transpose()?;
    let grad_v_error_sq = match &cfg.model.kind {
        ModelKind::Vlasov { confinement, .. } => {
            let mut err = 0.0;
            for flat in 0..lattice.len() {
                let p = lattice.point(flat);
                if p.iter().map(|v| v * v).sum::<f64>().sqrt() <= i.radius {
                    err += grad_v_hat.at(flat).iter().zip(&p).map(|(g, x)| (g - confinement * x).powi(2)).sum::<f64>();
                }
            }
            Some(err * lattice.cell_volume())
        }
        ModelKind::MeanFieldOu { .. } => None,
    };
    let record = InteractionRecord {
        kind: "interaction".into(),
        n,
        seed: ens.seed(),
        varpi,
        h: bw.h,
        h1: bw.h1,
        h2: bw.h2,
        retained_fraction: rep.retained_fraction,
        max_imaginary: rep.max_imaginary,
        norm_sq: rep.l2_norm_sq,
        error_sq,
        grad_v_error_sq,
    };
    Ok(InteractionOutcome { record, grad_w_hat: rep.grad_w_hat, grad_w, grad_v_hat })
}

/// Lattice dump of an interaction estimate (one-dimensional lattices only
/// carry the full field; higher dimensions list every point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub point: String,
    pub grad_w_hat: f64,
    pub grad_w: Option<f64>,
    pub grad_v_hat: f64,
}

pub fn field_rows(out: &InteractionOutcome) -> Vec<FieldRow> {
    let f = &out.grad_w_hat;
    (0..f.lattice.len())
        .map(|flat| FieldRow {
            point: f.lattice.point(flat).iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" "),
            grad_w_hat: f.at(flat)[0],
            grad_w: out.grad_w.as_ref().map(|t| t.at(flat)[0]),
            grad_v_hat: out.grad_v_hat.at(flat)[0],
        })
        .collect()
}

// ---------------------------------------------------------------- rates

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub kind: String,
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub density: f64,
    pub density_truth: f64,
    pub density_h: f64,
    pub drift: f64,
    pub drift_truth: f64,
    pub drift_h1: f64,
    pub drift_h2: f64,
    /// `W1(mu^N_T, mu_T)` against the oracle law at the final time.
    pub w1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub replicates: usize,
    pub density_rmse: f64,
    pub drift_rmse: f64,
    pub w1_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub density_fit: LinearFit,
    pub drift_fit: LinearFit,
    pub chaos_fit: LinearFit,
    pub records: Vec<RateRecord>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn w1_to_oracle(p: &MeanFieldOu, ens: &TrajectoryEnsemble) -> Result<f64> {
    let grid = ens.grid();
    let (m, v) = euler_law(p, grid.dt(), grid.n_steps())?;
    let law = Normal::new(m, v.sqrt()).map_err(|e| CliError::Invalid(format!("oracle law: {e}")))?;
    let mut xs = ens.column(grid.n_steps()).into_coords();
    xs.sort_by(f64::total_cmp);
    Ok(w1_to_cdf(&xs, |x| law.cdf(x))?)
}

/// Density, drift and propagation-of-chaos errors over the `N` schedule.
pub fn run_bench_rates(cfg: &ExperimentConfig) -> Result<RateReport> {
    cfg.validate()?;
    let mut ns = cfg.replication.n_schedule.clone();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(CliError::Invalid("need ≥3 distinct N".into()));
    }
    let oracle = cfg.oracle().ok_or_else(|| CliError::Invalid("bench-rates needs the mean-field OU model with a Gaussian initial law".into()))?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &n in &ns {
        let recs = replicated(n, cfg.replication.base_seed, cfg.replication.replicates, |j, seed| {
            let ens = simulate(cfg, n, seed)?;
            let d = estimate_density(cfg, &ens)?;
            let b = estimate_drift(cfg, &ens)?;
            Ok(RateRecord {
                kind: "rate".into(),
                n,
                replicate: j,
                seed,
                density: d.value,
                density_truth: d.truth.expect("oracle model"),
                density_h: d.h,
                drift: b.b_hat[0],
                drift_truth: b.truth.expect("oracle model"),
                drift_h1: b.h1,
                drift_h2: b.h2,
                w1: w1_to_oracle(&oracle, &ens)?,
            })
        })?;
        let dens: Vec<f64> = recs.iter().map(|r| (r.density - r.density_truth).powi(2)).collect();
        let drift: Vec<f64> = recs.iter().map(|r| (r.drift - r.drift_truth).powi(2)).collect();
        let mut w1: Vec<f64> = recs.iter().map(|r| r.w1).collect();
        rows.push(RateRow {
            n,
            replicates: recs.len(),
            density_rmse: mean(&dens).sqrt(),
            drift_rmse: mean(&drift).sqrt(),
            w1_median: median(&mut w1),
        });
        records.extend(recs);
    }
    let nf: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let fit = |f: fn(&RateRow) -> f64| rate_slope(&nf, &rows.iter().map(f).collect::<Vec<_>>());
    Ok(RateReport {
        density_fit: fit(|r| r.density_rmse)?,
        drift_fit: fit(|r| r.drift_rmse)?,
        chaos_fit: fit(|r| r.w1_median)?,
        rows,
        records,
    })
}

// --------------------------------------------------------- oracle ratio

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRatioReport {
    pub n: usize,
    pub replicates: usize,
    /// Median over replicates of `(GL error)^2 / min_h MSE(h)`.
    pub density_median_ratio: f64,
    pub drift_median_ratio: f64,
    pub density_oracle_mse: f64,
    pub drift_oracle_mse: f64,
    pub density_oracle_h: Vec<f64>,
    pub drift_oracle_h: Vec<f64>,
}

struct GridErrors {
    gl: f64,
    per_entry: Vec<f64>,
}

fn oracle_ratio(errs: &[GridErrors], grid: &[Vec<f64>]) -> (f64, f64, Vec<f64>) {
    let m = errs.len() as f64;
    let mse: Vec<f64> = (0..grid.len()).map(|j| errs.iter().map(|e| e.per_entry[j]).sum::<f64>() / m).collect();
    let (best, oracle) = mse.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(j, v)| (j, *v)).expect("nonempty grid");
    let mut ratios: Vec<f64> = errs.iter().map(|e| e.gl / oracle).collect();
    (median(&mut ratios), oracle, grid[best].clone())
}

/// GL squared error relative to the risk of the best fixed grid entry, at
/// `N = sim.n`.
pub fn run_oracle_ratio(cfg: &ExperimentConfig) -> Result<OracleRatioReport> {
    cfg.validate()?;
    if cfg.oracle().is_none() {
        return Err(CliError::Invalid("the oracle ratio needs the mean-field OU model with a Gaussian initial law".into()));
    }
    let n = cfg.sim.n;
    let dgrid = cfg.density_grid(n)?;
    let bgrid = cfg.drift_grid(n)?;
    let per_rep = replicated(n, cfg.replication.base_seed, cfg.replication.replicates, |_, seed| {
        let ens = simulate(cfg, n, seed)?;
        let truth = point_truth(cfg, &ens)?.expect("oracle model");
        let k = cfg.space_kernel()?;
        let rep = drift_gl(&ens, cfg.estimate.t0, &cfg.estimate.x0, &bgrid, &dgrid, &cfg.time_kernel()?, &k, drift_weights(cfg))?;
        let dens = GridErrors {
            gl: (rep.mu_hat - truth.density).powi(2),
            per_entry: rep.density_gl.estimates.iter().map(|e| (e[0] - truth.density).powi(2)).collect(),
        };
        let per_entry = rep
            .pi_gl
            .estimates
            .iter()
            .map(|pi| Ok((quotient(pi, rep.mu_hat, rep.varpi3)?[0] - truth.drift).powi(2)))
            .collect::<Result<Vec<f64>>>()?;
        let drift = GridErrors { gl: (rep.b_hat[0] - truth.drift).powi(2), per_entry };
        Ok((dens, drift))
    })?;
    let (dens, drift): (Vec<GridErrors>, Vec<GridErrors>) = per_rep.into_iter().unzip();
    let (density_median_ratio, density_oracle_mse, density_oracle_h) = oracle_ratio(&dens, dgrid.entries());
    let (drift_median_ratio, drift_oracle_mse, drift_oracle_h) = oracle_ratio(&drift, bgrid.entries());
    Ok(OracleRatioReport {
        n,
        replicates: dens.len(),
        density_median_ratio,
        drift_median_ratio,
        density_oracle_mse,
        drift_oracle_mse,
        density_oracle_h,
        drift_oracle_h,
    })
}

// -------------------------------------------------------- concentration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationEntry {
    pub function: TestFunction,
    pub n: usize,
    pub oracle_mean: f64,
    /// `|phi|_{L2(nu)}^2`.
    pub v: f64,
    /// `|phi|_inf`.
    pub m: f64,
    pub deviation_variance: f64,
    pub envelope: TailEnvelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub t0: f64,
    pub entries: Vec<ConcentrationEntry>,
}

impl ConcentrationReport {
    /// `N Var(D)` at the smallest `N` over the same at the largest, per
    /// function; `1` when the variance scales exactly as `1 / N`.
    pub fn variance_scaling(&self) -> Vec<(TestFunction, f64)> {
        let mut out = Vec::new();
        let mut fns: Vec<TestFunction> = self.entries.iter().map(|e| e.function).collect();
        fns.dedup();
        for f in fns {
            let es: Vec<&ConcentrationEntry> = self.entries.iter().filter(|e| e.function == f).collect();
            let lo = es.iter().min_by_key(|e| e.n).expect("nonempty");
            let hi = es.iter().max_by_key(|e| e.n).expect("nonempty");
            out.push((f, lo.n as f64 * lo.deviation_variance / (hi.n as f64 * hi.deviation_variance)));
        }
        out
    }
}

/// `int g dN(m, v)` by Gauss-Legendre over `m +- 12 sd`, split at the kinks
/// of the bump.
fn gaussian_expectation(g: impl Fn(f64) -> f64, m: f64, v: f64) -> f64 {
    let sd = v.sqrt();
    let (a, b) = (m - 12.0 * sd, m + 12.0 * sd);
    let mut cuts = vec![a];
    cuts.extend([-1.0, 1.0].into_iter().filter(|c| *c > a && *c < b));
    cuts.push(b);
    let gl = GaussLegendre::new(20);
    cuts.windows(2).map(|w| gl.integrate(|x| g(x) * gaussian_density(x, m, v), w[0], w[1], 32)).sum()
}

/// Deviations `<mu^N_t0 - mu_t0, phi>` (the point-evaluation choice of the
/// time weight) over replicates, with a Bernstein envelope fit per test
/// function and `N`.
pub fn run_check_concentration(cfg: &ExperimentConfig) -> Result<ConcentrationReport> {
    cfg.validate()?;
    let p = cfg
        .oracle()
        .ok_or_else(|| CliError::Invalid("check-concentration needs the mean-field OU model with a Gaussian initial law".into()))?;
    let grid = cfg.time_grid()?;
    let k0 = grid.nearest_index(cfg.estimate.t0)?;
    let t0 = grid.time(k0);
    let (m, v) = euler_law(&p, grid.dt(), k0)?;
    // only the path up to t0 matters; same step size keeps the same law
    let mut short = cfg.clone();
    short.sim.t_end = t0;
    short.sim.steps = k0;
    let fns = cfg.concentration.clone();
    let mut entries = Vec::new();
    for n in cfg.schedule() {
        let devs = replicated(n, cfg.replication.base_seed, cfg.replication.replicates, |_, seed| {
            let ens = simulate(&short, n, seed)?;
            let xs = ens.column(k0).into_coords();
            Ok(fns
                .iter()
                .map(|f| {
                    let oracle = if *f == TestFunction::Constant { 1.0 } else { gaussian_expectation(|x| f.eval(x), m, v) };
                    xs.iter().map(|x| f.eval(*x)).sum::<f64>() / n as f64 - oracle
                })
                .collect::<Vec<f64>>())
        })?;
        for (fi, f) in fns.iter().enumerate() {
            let d: Vec<f64> = devs.iter().map(|r| r[fi]).collect();
            let oracle_mean = if *f == TestFunction::Constant { 1.0 } else { gaussian_expectation(|x| f.eval(x), m, v) };
            let v2 = gaussian_expectation(|x| f.eval(x).powi(2), m, v);
            let dm = mean(&d);
            let var = d.iter().map(|x| (x - dm).powi(2)).sum::<f64>() / (d.len() as f64 - 1.0);
            entries.push(ConcentrationEntry {
                function: *f,
                n,
                oracle_mean,
                v: v2,
                m: f.sup_norm(),
                deviation_variance: var,
                envelope: fit_tail_envelope(&d, v2, f.sup_norm(), n)?,
            });
        }
    }
    entries.sort_by_key(|e| (fns.iter().position(|f| *f == e.function), e.n));
    Ok(ConcentrationReport { t0, entries })
}

// --------------------------------------------------- interaction checks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub replicates: usize,
    pub mean_error_sq: f64,
    pub stderr: f64,
    pub mean_norm_sq: f64,
    pub retained_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    pub truth_norm_sq: f64,
    /// Mean `|grad W_hat|^2` of the `W = 0` run at the largest `N`.
    pub null_norm_sq: f64,
    pub null_stderr: f64,
    pub records: Vec<InteractionRecord>,
}

impl ConsistencyReport {
    /// Each mean error is at most the previous one plus one standard error.
    pub fn nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_error_sq <= w[0].mean_error_sq + w[0].stderr.max(w[1].stderr))
    }

    /// Interacting over null `|grad W_hat|^2` at the largest `N`.
    pub fn null_ratio(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.mean_norm_sq) / self.null_norm_sq
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0);
    (m, (var / v.len() as f64).sqrt())
}

/// Interaction estimation error over the schedule, plus a `W = 0` run at
/// the largest `N`.
pub fn run_interaction_consistency(cfg: &ExperimentConfig) -> Result<ConsistencyReport> {
    cfg.validate()?;
    cfg.validate_interaction()?;
    let lattice = Lattice::new(cfg.model.dim, cfg.interaction.half_width, cfg.interaction.points)?;
    let truth = true_grad_w(cfg, lattice).ok_or_else(|| CliError::Invalid("the interaction force must be known".into()))?;
    let ns = cfg.schedule();
    let reps = cfg.replication.replicates;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &n in &ns {
        let recs = replicated(n, cfg.replication.base_seed, reps, |_, seed| {
            Ok(estimate_interaction(cfg, &simulate(cfg, n, seed)?)?.record)
        })?;
        let errs: Vec<f64> = recs.iter().map(|r| r.error_sq.expect("known truth")).collect();
        let (mean_error_sq, stderr) = mean_se(&errs);
        rows.push(ConsistencyRow {
            n,
            replicates: recs.len(),
            mean_error_sq,
            stderr,
            mean_norm_sq: mean(&recs.iter().map(|r| r.norm_sq).collect::<Vec<_>>()),
            retained_fraction: mean(&recs.iter().map(|r| r.retained_fraction).collect::<Vec<_>>()),
        });
        records.extend(recs);
    }
    let mut null = cfg.clone();
    if let ModelKind::Vlasov { interaction, .. } = &mut null.model.kind {
        *interaction = Interaction::None;
    }
    let n_max = *ns.iter().max().expect("nonempty schedule");
    let null_recs = replicated(n_max, cfg.replication.base_seed ^ 0x6e75_6c6c, reps, |_, seed| {
        let mut r = estimate_interaction(&null, &simulate(&null, n_max, seed)?)?.record;
        r.kind = "interaction-null".into();
        Ok(r)
    })?;
    let (null_norm_sq, null_stderr) = mean_se(&null_recs.iter().map(|r| r.norm_sq).collect::<Vec<_>>());
    records.extend(null_recs);
    Ok(ConsistencyReport { rows, truth_norm_sq: truth.l2_norm_sq(), null_norm_sq, null_stderr, records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiOracleReport {
    pub retained: usize,
    pub relative_l2_error: f64,
}

/// The Fourier quotient fed with exact fields: Gaussian marginals
/// `N(m_t, v_t)` with closed-form `F(L mu)`, and the drift
/// `-k x - (grad W * mu_t)(x)` computed by quadrature on the lattice. The
/// recovered `F(grad W)` is compared with the transform of `grad W` itself
/// on the retained frequencies.
pub fn semi_oracle_quotient(cfg: &ExperimentConfig) -> Result<SemiOracleReport> {
    cfg.validate_interaction()?;
    if cfg.model.dim != 1 {
        return Err(CliError::Invalid("the semi-oracle check is one-dimensional".into()));
    }
    let ModelKind::Vlasov { confinement: k, interaction: Interaction::Bump { strength, radius } } = cfg.model.kind else {
        return Err(CliError::Invalid("the semi-oracle check needs a bump interaction".into()));
    };
    let crate::experiment::InitSpec::Gaussian { mean: m0, var: v0 } = &cfg.model.init else {
        return Err(CliError::Invalid("the semi-oracle check needs a Gaussian initial law".into()));
    };
    let i = &cfg.interaction;
    let grid = cfg.time_grid()?;
    let lattice = Lattice::new(1, i.half_width, i.points)?;
    let form = LinearForm::new(i.weight, &grid)?;
    let family = MeanFieldOu::new(k.max(0.0), 0.0, cfg.model.sigma, m0[0], v0[0])?;
    let force = PolynomialForce::bump(strength, radius);
    let gl = GaussLegendre::new(20);

    let mut lb = SpatialField::zeros(lattice, 1);
    let mut den = FourierField { lattice, comps: 1, values: vec![Complex64::new(0.0, 0.0); lattice.len()] };
    for kk in form.active() {
        let c = form.coefficients()[kk];
        let (m, v) = family.moments(grid.time(kk))?;
        for j in 0..lattice.len() {
            let x = lattice.coordinate(j);
            let conv = gl.integrate(|u| force.eval(u) * gaussian_density(x - u, m, v), -radius, radius, 16);
            lb.values[j] += c * (-k * x - conv);
            let xi = lattice.frequency(j);
            den.values[j] += c * Complex64::from_polar((-2.0 * PI * PI * v * xi * xi).exp(), -2.0 * PI * xi * m);
        }
    }
    let varpi = interaction_threshold(cfg, cfg.sim.n);
    let (q, mask) = fourier_quotient(&forward_transform(&lb), &den, varpi)?;
    let (mut num, mut norm, mut retained) = (0.0, 0.0, 0);
    for (j, keep) in mask.iter().enumerate() {
        if !keep {
            continue;
        }
        let xi = lattice.frequency(j);
        let re = gl.integrate(|u| force.eval(u) * (2.0 * PI * xi * u).cos(), -radius, radius, 64);
        let im = -gl.integrate(|u| force.eval(u) * (2.0 * PI * xi * u).sin(), -radius, radius, 64);
        let truth = Complex64::new(re, im);
        num += (q.values[j] - truth).norm_sqr();
        norm += truth.norm_sqr();
        retained += 1;
    }
    if retained == 0 || norm == 0.0 {
        return Err(CliError::Invalid("no retained frequency carries signal".into()));
    }
    Ok(SemiOracleReport { retained, relative_l2_error: (num / norm).sqrt() })
}

// -------------------------------------------------------- full pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRecord {
    pub kind: String,
    pub n: usize,
    pub steps: usize,
    pub t_end: f64,
    pub seed: u64,
    pub file: String,
}

/// Every record of a pipeline run, in output order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PipelineRecord {
    Simulate(SimulateRecord),
    Density(DensityRecord),
    Drift(DriftRecord),
    Interaction(InteractionRecord),
}

pub const TRAJECTORY_FILE: &str = "trajectories.mkv";

/// simulate -> estimate-density -> estimate-drift -> estimate-interaction
/// (Vlasov models with a compact interaction), sharing the trajectory file.
pub fn run_full_pipeline(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<PipelineRecord>> {
    cfg.validate()?;
    let traj = out.path(TRAJECTORY_FILE);
    let ens = simulate(cfg, cfg.sim.n, cfg.sim.seed)?;
    ens.save(&traj)?;
    let mut records = vec![PipelineRecord::Simulate(SimulateRecord {
        kind: "simulate".into(),
        n: ens.n_particles(),
        steps: ens.grid().n_steps(),
        t_end: ens.grid().t_end(),
        seed: ens.seed(),
        file: TRAJECTORY_FILE.into(),
    })];
    let ens = TrajectoryEnsemble::load(&traj)?;
    let d = estimate_density(cfg, &ens)?;
    out.ndjson("density", std::slice::from_ref(&d))?;
    records.push(PipelineRecord::Density(d));
    let b = estimate_drift(cfg, &ens)?;
    out.ndjson("drift", std::slice::from_ref(&b))?;
    records.push(PipelineRecord::Drift(b));
    if cfg.validate_interaction().is_ok() {
        let i = estimate_interaction(cfg, &ens)?;
        out.ndjson("interaction", std::slice::from_ref(&i.record))?;
        out.csv("interaction_field", &field_rows(&i))?;
        records.push(PipelineRecord::Interaction(i.record));
    }
    out.ndjson("pipeline", &records)?;
    Ok(records)
}

/// Loads a trajectory file, or simulates `sim.n` particles with `sim.seed`.
pub fn load_or_simulate(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<TrajectoryEnsemble> {
    match path {
        Some(p) => Ok(TrajectoryEnsemble::load(p)?),
        None => simulate(cfg, cfg.sim.n, cfg.sim.seed),
    }
}
