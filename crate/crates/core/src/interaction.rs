//! Fourier-quotient estimation of the interaction force in Vlasov models.
//!
//! A centered time weight defines the linear form `L f = sum_k w(t_k) rho_k f(t_k)`
//! with `sum_k w(t_k) rho_k = 0`, so `L` annihilates the confinement term and
//! `L b = -grad W * L mu`. With the transform `F(f)(xi) = int e^{-2 pi i xi.x} f(x) dx`,
//!
//! ```text
//! F(grad W_hat) = -F(L b_hat) conj(F(L mu^N)) / |F(L mu^N)|^2   where |F(L mu^N)|^2 >= varpi
//! ```
//!
//! and zero elsewhere. `F(L mu^N)` is the exact periodogram of the weighted
//! atoms; `F(L b_hat)` is a discrete transform of the estimated drift on a
//! regular lattice.
//!
//! Lattice conventions: the box `[-R, R]^d` carries `M` points per axis
//! (`M` even), `x_j = -R + j dx` with `dx = 2R / M`, and the dual lattice is
//! `xi_m = (m - M/2) / (2R)`. Fields are stored point-major, row-major over
//! the multi-index (last axis fastest).

use std::f64::consts::PI;

use rayon::prelude::*;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::kernels::{scaled_unchecked, KernelSpec};
use crate::model::TimeGrid;
use crate::traj::TrajectoryEnsemble;
use crate::{Error, Result};

/// Regular lattice on `[-R, R]^d` with `M` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    half_width: f64,
    m: usize,
}

impl Lattice {
    pub fn new(dim: usize, half_width: f64, m: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("lattice dimension must be >= 1".into()));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidParameter(format!("box half-width must be > 0, got {half_width}")));
        }
        if m < 2 || m % 2 != 0 {
            return Err(Error::InvalidParameter(format!("points per axis must be even and >= 2, got {m}")));
        }
        Ok(Self { dim, half_width, m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.m as f64
    }

    pub fn dxi(&self) -> f64 {
        1.0 / (2.0 * self.half_width)
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    pub fn coordinate(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx()
    }

    pub fn frequency(&self, m: usize) -> f64 {
        (m as f64 - (self.m / 2) as f64) * self.dxi()
    }

    /// Per-axis indices of flat index `flat`.
    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for c in (0..self.dim).rev() {
            out[c] = flat % self.m;
            flat /= self.m;
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dim];
        self.unflatten(flat, &mut idx);
        idx.iter().map(|&j| self.coordinate(j)).collect()
    }

    pub fn frequency_point(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dim];
        self.unflatten(flat, &mut idx);
        idx.iter().map(|&m| self.frequency(m)).collect()
    }

    /// `(-1)^{sum of indices}`.
    fn parity(&self, flat: usize) -> f64 {
        let mut idx = vec![0; self.dim];
        self.unflatten(flat, &mut idx);
        if idx.iter().sum::<usize>() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Flat index of the frequency `-xi_m`, if it lies on the lattice.
    pub fn mirror(&self, flat: usize) -> Option<usize> {
        let mut idx = vec![0; self.dim];
        self.unflatten(flat, &mut idx);
        let mut out = 0;
        for &m in &idx {
            if m == 0 {
                return None;
            }
            out = out * self.m + (self.m - m);
        }
        Some(out)
    }
}

/// A real `R^comps`-valued field sampled on a lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialField {
    pub lattice: Lattice,
    pub comps: usize,
    pub values: Vec<f64>,
}

impl SpatialField {
    pub fn zeros(lattice: Lattice, comps: usize) -> Self {
        Self { lattice, comps, values: vec![0.0; lattice.len() * comps] }
    }

    pub fn from_fn(lattice: Lattice, comps: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut field = Self::zeros(lattice, comps);
        for (flat, out) in field.values.chunks_exact_mut(comps).enumerate() {
            f(&lattice.point(flat), out);
        }
        field
    }

    pub fn at(&self, flat: usize) -> &[f64] {
        &self.values[flat * self.comps..(flat + 1) * self.comps]
    }

    /// `int |f|^2` by the lattice Riemann sum.
    pub fn l2_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.lattice.cell_volume()
    }

    /// `int |f - g|^2` by the lattice Riemann sum.
    pub fn l2_distance_sq(&self, other: &SpatialField) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            * self.lattice.cell_volume())
    }

    fn same_shape(&self, other: &SpatialField) -> Result<()> {
        if self.lattice != other.lattice || self.comps != other.comps {
            return Err(Error::GridMismatch("fields live on different lattices".into()));
        }
        Ok(())
    }
}

/// A complex `C^comps`-valued field on the dual lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierField {
    pub lattice: Lattice,
    pub comps: usize,
    pub values: Vec<Complex64>,
}

impl FourierField {
    pub fn at(&self, flat: usize) -> &[Complex64] {
        &self.values[flat * self.comps..(flat + 1) * self.comps]
    }

    /// Largest `|F(-xi) - conj(F(xi))|` over mirrored lattice pairs.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for flat in 0..self.lattice.len() {
            if let Some(mirror) = self.lattice.mirror(flat) {
                for c in 0..self.comps {
                    let a = self.values[flat * self.comps + c];
                    let b = self.values[mirror * self.comps + c];
                    worst = worst.max((a - b.conj()).norm());
                }
            }
        }
        worst
    }
}

fn fft_nd(lattice: &Lattice, data: &mut [Complex64], inverse: bool) {
    let m = lattice.m;
    let d = lattice.dim;
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    for axis in 0..d {
        let stride = m.pow((d - 1 - axis) as u32);
        let block = stride * m;
        for start in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[base + j * stride];
                }
                fft.process(&mut line);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}

/// `F(xi_m) = dx^d sum_j f(x_j) e^{-2 pi i xi_m . x_j}` for each component.
pub fn forward_transform(field: &SpatialField) -> FourierField {
    let lat = field.lattice;
    let n = lat.len();
    let half_sign = if (lat.dim * (lat.m / 2)) % 2 == 0 { 1.0 } else { -1.0 };
    let scale = lat.cell_volume();
    let mut out = vec![Complex64::new(0.0, 0.0); n * field.comps];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..field.comps {
        for (flat, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(field.values[flat * field.comps + c] * lat.parity(flat), 0.0);
        }
        fft_nd(&lat, &mut buf, false);
        for (flat, b) in buf.iter().enumerate() {
            out[flat * field.comps + c] = b * (scale * half_sign * lat.parity(flat));
        }
    }
    FourierField { lattice: lat, comps: field.comps, values: out }
}

/// Inverse of [`forward_transform`]: `f(x_j) = dxi^d sum_m F(xi_m) e^{2 pi i xi_m . x_j}`.
/// Returns the real part and the largest discarded imaginary part.
pub fn inverse_transform(field: &FourierField) -> (SpatialField, f64) {
    let lat = field.lattice;
    let n = lat.len();
    let half_sign = if (lat.dim * (lat.m / 2)) % 2 == 0 { 1.0 } else { -1.0 };
    let scale = lat.dxi().powi(lat.dim as i32);
    let mut out = SpatialField::zeros(lat, field.comps);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut max_imag: f64 = 0.0;
    for c in 0..field.comps {
        for (flat, b) in buf.iter_mut().enumerate() {
            *b = field.values[flat * field.comps + c] * (half_sign * lat.parity(flat));
        }
        fft_nd(&lat, &mut buf, true);
        for (flat, b) in buf.iter().enumerate() {
            let v = b * (scale * lat.parity(flat));
            out.values[flat * field.comps + c] = v.re;
            max_imag = max_imag.max(v.im.abs());
        }
    }
    (out, max_imag)
}

/// Shape of the time weight before centering. Interval endpoints are
/// fractions of the horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeWeight {
    /// `exp(1 - 1 / (1 - s^2))` with `s` the position rescaled to `(-1, 1)`.
    Bump { a: f64, b: f64 },
    /// Derivative in `s` of the bump, normalised to unit peak.
    BumpDerivative { a: f64, b: f64 },
    /// `+1` at the grid time nearest `a T`, `-1` at the one nearest `b T`.
    TwoPoint { a: f64, b: f64 },
}

impl std::str::FromStr for TimeWeight {
    type Err = Error;

    /// `bump:a,b`, `dbump:a,b` or `twopoint:a,b`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad time weight {s:?}, expected e.g. bump:0.2,0.8"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let (a, b) = rest.split_once(',').ok_or_else(bad)?;
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        match kind.trim() {
            "bump" => Ok(TimeWeight::Bump { a, b }),
            "dbump" => Ok(TimeWeight::BumpDerivative { a, b }),
            "twopoint" => Ok(TimeWeight::TwoPoint { a, b }),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for TimeWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TimeWeight::Bump { a, b } => write!(f, "bump:{a},{b}"),
            TimeWeight::BumpDerivative { a, b } => write!(f, "dbump:{a},{b}"),
            TimeWeight::TwoPoint { a, b } => write!(f, "twopoint:{a},{b}"),
        }
    }
}

/// The linear form with `rho` uniform on the observation times
/// `t_0, ..., t_n`: coefficient `k` is `w(t_k) / (n + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearForm {
    weight: TimeWeight,
    coefficients: Vec<f64>,
}

impl LinearForm {
    pub fn new(weight: TimeWeight, grid: &TimeGrid) -> Result<Self> {
        let (a, b) = match weight {
            TimeWeight::Bump { a, b } | TimeWeight::BumpDerivative { a, b } | TimeWeight::TwoPoint { a, b } => (a, b),
        };
        if !(a > 0.0 && b < 1.0 && a < b) {
            return Err(Error::InvalidParameter(format!(
                "weight support [{a}, {b}] must lie strictly inside (0, 1) in units of T"
            )));
        }
        let n = grid.n_steps();
        let t_end = grid.t_end();
        let rho = 1.0 / (n + 1) as f64;
        let mut w = vec![0.0; n + 1];
        match weight {
            TimeWeight::TwoPoint { .. } => {
                let ka = grid.nearest_index(a * t_end)?;
                let kb = grid.nearest_index(b * t_end)?;
                if ka == kb {
                    return Err(Error::DegenerateLinearForm);
                }
                w[ka] = 1.0;
                w[kb] = -1.0;
            }
            TimeWeight::Bump { .. } | TimeWeight::BumpDerivative { .. } => {
                let derivative = matches!(weight, TimeWeight::BumpDerivative { .. });
                // peak of |d/ds exp(1 - 1/(1 - s^2))| on (-1, 1)
                let peak = {
                    let s2 = (3f64.sqrt() - 1.0) / 3.0;
                    let s = s2.sqrt();
                    2.0 * s / (1.0 - s2).powi(2) * (1.0 - 1.0 / (1.0 - s2)).exp()
                };
                let mut support = Vec::new();
                for (k, wk) in w.iter_mut().enumerate() {
                    let s = (2.0 * grid.time(k) / t_end - (a + b)) / (b - a);
                    if s.abs() < 1.0 - 1e-9 {
                        let g = (1.0 - 1.0 / (1.0 - s * s)).exp();
                        *wk = if derivative { -2.0 * s / (1.0 - s * s).powi(2) * g / peak } else { g };
                        support.push(k);
                    }
                }
                if support.is_empty() {
                    return Err(Error::DegenerateLinearForm);
                }
                let mean = support.iter().map(|&k| w[k]).sum::<f64>() / support.len() as f64;
                for &k in &support {
                    w[k] -= mean;
                }
            }
        }
        let coefficients: Vec<f64> = w.iter().map(|v| v * rho).collect();
        if coefficients.iter().all(|c| c.abs() < 1e-300) {
            return Err(Error::DegenerateLinearForm);
        }
        Ok(Self { weight, coefficients })
    }

    pub fn weight(&self) -> TimeWeight {
        self.weight
    }

    /// `w(t_k) rho_k` for every grid index.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Grid indices with a nonzero coefficient.
    pub fn active(&self) -> Vec<usize> {
        self.coefficients.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(k, _)| k).collect()
    }

    /// `sum_k c_k series[k]`, for any vector-valued series indexed by grid time.
    pub fn apply_series(&self, series: &[Vec<f64>]) -> Result<Vec<f64>> {
        if series.len() != self.coefficients.len() {
            return Err(Error::GridMismatch(format!(
                "series has {} times, form has {}",
                series.len(),
                self.coefficients.len()
            )));
        }
        let width = series.first().map(Vec::len).unwrap_or(0);
        let mut out = vec![0.0; width];
        for (c, v) in self.coefficients.iter().zip(series) {
            if v.len() != width {
                return Err(Error::GridMismatch("series values differ in length".into()));
            }
            if *c != 0.0 {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += c * x;
                }
            }
        }
        Ok(out)
    }

    /// `L mu^N` as weighted atoms `(X^i_k, c_k / N)`.
    pub fn apply_to_ensemble(&self, ens: &TrajectoryEnsemble) -> Result<Vec<(Vec<f64>, f64)>> {
        self.check_grid(ens)?;
        let n = ens.n_particles() as f64;
        let mut atoms = Vec::new();
        for k in self.active() {
            for i in 0..ens.n_particles() {
                atoms.push((ens.position(i, k).to_vec(), self.coefficients[k] / n));
            }
        }
        Ok(atoms)
    }

    fn check_grid(&self, ens: &TrajectoryEnsemble) -> Result<()> {
        if ens.grid().n_steps() + 1 != self.coefficients.len() {
            return Err(Error::GridMismatch("linear form built for a different time grid".into()));
        }
        Ok(())
    }
}

/// `e^{-2 pi i xi_m x}` for all `m`, built from the nonnegative frequencies
/// and mirrored so that the table is exactly Hermitian.
fn phasors(lattice: &Lattice, x: f64, out: &mut [Complex64]) {
    let m = lattice.m;
    let half = m / 2;
    let step = Complex64::from_polar(1.0, -2.0 * PI * lattice.dxi() * x);
    out[half] = Complex64::new(1.0, 0.0);
    let mut p = Complex64::new(1.0, 0.0);
    for k in 1..half {
        // re-anchor periodically to keep the recurrence error at machine level
        p = if k % 32 == 0 { Complex64::from_polar(1.0, -2.0 * PI * lattice.frequency(half + k) * x) } else { p * step };
        out[half + k] = p;
        out[half - k] = p.conj();
    }
    out[0] = Complex64::from_polar(1.0, -2.0 * PI * lattice.frequency(0) * x);
}

/// `F(L mu^N)(xi) = sum_k c_k N^{-1} sum_i e^{-2 pi i xi . X^i_k}` on the dual lattice.
pub fn periodogram(ens: &TrajectoryEnsemble, form: &LinearForm, lattice: &Lattice) -> Result<FourierField> {
    form.check_grid(ens)?;
    if lattice.dim != ens.dim() {
        return Err(Error::DimensionMismatch { expected: ens.dim(), got: lattice.dim });
    }
    let d = lattice.dim;
    let m = lattice.m;
    let len = lattice.len();
    let active = form.active();
    let per_time: Vec<Vec<Complex64>> = active
        .par_iter()
        .map(|&k| {
            let mut acc = vec![Complex64::new(0.0, 0.0); len];
            let mut tables = vec![Complex64::new(0.0, 0.0); d * m];
            let mut idx = vec![0usize; d];
            for i in 0..ens.n_particles() {
                let x = ens.position(i, k);
                for (c, xc) in x.iter().enumerate() {
                    phasors(lattice, *xc, &mut tables[c * m..(c + 1) * m]);
                }
                if d == 1 {
                    for (a, p) in acc.iter_mut().zip(&tables) {
                        *a += p;
                    }
                } else {
                    for (flat, a) in acc.iter_mut().enumerate() {
                        lattice.unflatten(flat, &mut idx);
                        let mut p = tables[idx[0]];
                        for c in 1..d {
                            p *= tables[c * m + idx[c]];
                        }
                        *a += p;
                    }
                }
            }
            acc
        })
        .collect();
    let n = ens.n_particles() as f64;
    let mut values = vec![Complex64::new(0.0, 0.0); len];
    for (acc, &k) in per_time.iter().zip(&active) {
        let c = form.coefficients()[k] / n;
        for (v, a) in values.iter_mut().zip(acc) {
            *v += a * c;
        }
    }
    Ok(FourierField { lattice: *lattice, comps: 1, values })
}

/// The thresholded quotient. `numerator` holds `F(L b)` (any number of
/// components), `denominator` holds `F(L mu)` (one component). Returns the
/// estimate of `F(grad W)` and the retained-frequency mask.
pub fn fourier_quotient(numerator: &FourierField, denominator: &FourierField, varpi: f64) -> Result<(FourierField, Vec<bool>)> {
    if numerator.lattice != denominator.lattice || denominator.comps != 1 {
        return Err(Error::GridMismatch("quotient inputs live on different lattices".into()));
    }
    if !(varpi > 0.0) {
        return Err(Error::InvalidParameter(format!("varpi must be > 0, got {varpi}")));
    }
    let comps = numerator.comps;
    let mut values = vec![Complex64::new(0.0, 0.0); numerator.values.len()];
    let mut mask = vec![false; denominator.values.len()];
    for (flat, den) in denominator.values.iter().enumerate() {
        let power = den.norm_sqr();
        if power >= varpi {
            mask[flat] = true;
            for c in 0..comps {
                values[flat * comps + c] = -numerator.values[flat * comps + c] * den.conj() / power;
            }
        }
    }
    Ok((FourierField { lattice: numerator.lattice, comps, values }, mask))
}

/// Bandwidths of the plug-in drift field: `h` for the density, `(h1, h2)`
/// for the increment measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldBandwidths {
    pub h: f64,
    pub h1: f64,
    pub h2: f64,
}

/// Drift and density estimates on a lattice at a set of grid times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftField {
    pub times: Vec<usize>,
    /// Truncated drift `b_hat 1{|x| <= r}`, one field per entry of `times`.
    pub drift: Vec<SpatialField>,
    /// Density `mu_hat`, one field per entry of `times`.
    pub density: Vec<SpatialField>,
    pub bandwidths: FieldBandwidths,
    pub varpi_prime: f64,
    pub radius: f64,
}

impl DriftField {
    fn index_of(&self, k: usize) -> Option<usize> {
        self.times.iter().position(|&t| t == k)
    }
}

/// Adds `weight * K_h(x_j - x)` to `out[j * comps + c]` for all lattice
/// points within the kernel support.
fn deposit(lattice: &Lattice, kernel: &KernelSpec, h: f64, x: &[f64], weight: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    let d = lattice.dim;
    let comps = weight.len();
    let reach = h * kernel.support_radius();
    let dx = lattice.dx();
    let mut lo = vec![0usize; d];
    let mut hi = vec![0usize; d];
    for c in 0..d {
        let a = ((x[c] - reach + lattice.half_width) / dx).ceil();
        let b = ((x[c] + reach + lattice.half_width) / dx).floor();
        if b < 0.0 || a > (lattice.m - 1) as f64 {
            return;
        }
        lo[c] = a.max(0.0) as usize;
        hi[c] = b.min((lattice.m - 1) as f64) as usize;
        if lo[c] > hi[c] {
            return;
        }
    }
    scratch.resize(d, 0.0);
    let mut idx = lo.clone();
    loop {
        let mut flat = 0;
        for c in 0..d {
            scratch[c] = lattice.coordinate(idx[c]) - x[c];
            flat = flat * lattice.m + idx[c];
        }
        let k = scaled_unchecked(kernel, h, scratch);
        if k != 0.0 {
            for (o, w) in out[flat * comps..(flat + 1) * comps].iter_mut().zip(weight) {
                *o += k * w;
            }
        }
        let mut c = d;
        loop {
            if c == 0 {
                return;
            }
            c -= 1;
            if idx[c] < hi[c] {
                idx[c] += 1;
                break;
            }
            idx[c] = lo[c];
        }
    }
}

/// Estimates `b_hat(t_k, x_j) = pi_hat / max(mu_hat, varpi')` on the lattice
/// for every `k` in `times`, then truncates to `|x| <= r`.
#[allow(clippy::too_many_arguments)]
pub fn drift_field(
    ens: &TrajectoryEnsemble,
    lattice: &Lattice,
    times: &[usize],
    bandwidths: FieldBandwidths,
    time_kernel: &KernelSpec,
    space_kernel: &KernelSpec,
    varpi_prime: f64,
    radius: f64,
) -> Result<DriftField> {
    let d = ens.dim();
    if lattice.dim != d || space_kernel.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: lattice.dim.min(space_kernel.dim()) });
    }
    if !(varpi_prime > 0.0) {
        return Err(Error::InvalidParameter(format!("varpi' must be > 0, got {varpi_prime}")));
    }
    if !(radius > 0.0 && radius <= lattice.half_width) {
        return Err(Error::GridMismatch(format!(
            "truncation radius {radius} must be positive and fit in the box of half-width {}",
            lattice.half_width
        )));
    }
    let FieldBandwidths { h, h1, h2 } = bandwidths;
    if !(h > 0.0 && h1 > 0.0 && h2 > 0.0) {
        return Err(Error::InvalidParameter("bandwidths must be > 0".into()));
    }
    let grid = *ens.grid();
    let steps = grid.n_steps();
    let (tlo, thi) = time_kernel.factors()[0].support();
    for &k in times {
        if k > steps {
            return Err(Error::TimeOutOfRange { t: k as f64 * grid.dt(), t_end: grid.t_end() });
        }
        crate::drift::check_time_window(ens, grid.time(k), h1, time_kernel)?;
    }
    // every increment index any window touches
    let mut needed = vec![false; steps];
    for &k in times {
        let t = grid.time(k);
        for (s, flag) in needed.iter_mut().enumerate() {
            let u = (t - grid.time(s)) / h1;
            if u >= tlo - 1e-12 && u <= thi + 1e-12 {
                *flag = true;
            }
        }
    }
    let needed: Vec<usize> = (0..steps).filter(|&s| needed[s]).collect();
    let n = ens.n_particles() as f64;
    let len = lattice.len();

    let increments: Vec<Vec<f64>> = needed
        .par_iter()
        .map(|&s| {
            let mut g = vec![0.0; len * d];
            let mut scratch = Vec::new();
            let mut dx = vec![0.0; d];
            for i in 0..ens.n_particles() {
                let x = ens.position(i, s);
                let next = ens.position(i, s + 1);
                for c in 0..d {
                    dx[c] = (next[c] - x[c]) / n;
                }
                deposit(lattice, space_kernel, h2, x, &dx, &mut g, &mut scratch);
            }
            g
        })
        .collect();

    let fields: Vec<(SpatialField, SpatialField)> = times
        .par_iter()
        .map(|&k| {
            let t = grid.time(k);
            let mut pi = vec![0.0; len * d];
            for (g, &s) in increments.iter().zip(&needed) {
                let w = scaled_unchecked(time_kernel, h1, &[t - grid.time(s)]);
                if w != 0.0 {
                    for (p, v) in pi.iter_mut().zip(g) {
                        *p += w * v;
                    }
                }
            }
            let mut mu = vec![0.0; len];
            let mut scratch = Vec::new();
            let unit = [1.0 / n];
            for i in 0..ens.n_particles() {
                deposit(lattice, space_kernel, h, ens.position(i, k), &unit, &mut mu, &mut scratch);
            }
            let mut b = SpatialField::zeros(*lattice, d);
            for flat in 0..len {
                let p = lattice.point(flat);
                if p.iter().map(|v| v * v).sum::<f64>().sqrt() > radius {
                    continue;
                }
                let denom = mu[flat].max(varpi_prime);
                for c in 0..d {
                    b.values[flat * d + c] = pi[flat * d + c] / denom;
                }
            }
            (b, SpatialField { lattice: *lattice, comps: 1, values: mu })
        })
        .collect();
    let (drift, density) = fields.into_iter().unzip();
    Ok(DriftField { times: times.to_vec(), drift, density, bandwidths, varpi_prime, radius })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEstimateReport {
    pub grad_w_hat: SpatialField,
    pub varpi: f64,
    pub radius: f64,
    pub retained_fraction: f64,
    pub max_imaginary: f64,
    pub l2_norm_sq: f64,
    pub grad_v_hat: Option<SpatialField>,
}

/// `grad W_hat` from a lattice drift field and the periodogram of `ens`.
pub fn estimate_grad_w(ens: &TrajectoryEnsemble, field: &DriftField, form: &LinearForm, varpi: f64) -> Result<InteractionEstimateReport> {
    let lattice = field.drift.first().map(|f| f.lattice).ok_or(Error::EmptyGrid)?;
    let d = ens.dim();
    let mut lb = SpatialField::zeros(lattice, d);
    for k in form.active() {
        let j = field
            .index_of(k)
            .ok_or_else(|| Error::GridMismatch(format!("drift field lacks grid time index {k}")))?;
        let b = &field.drift[j];
        if b.lattice != lattice || b.comps != d {
            return Err(Error::GridMismatch("drift fields on differing lattices".into()));
        }
        if !b.values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("drift field"));
        }
        let c = form.coefficients()[k];
        for (o, v) in lb.values.iter_mut().zip(&b.values) {
            *o += c * v;
        }
    }
    let numerator = forward_transform(&lb);
    let denominator = periodogram(ens, form, &lattice)?;
    let (quotient, mask) = fourier_quotient(&numerator, &denominator, varpi)?;
    let (grad_w_hat, max_imaginary) = inverse_transform(&quotient);
    let retained_fraction = mask.iter().filter(|m| **m).count() as f64 / mask.len() as f64;
    Ok(InteractionEstimateReport {
        l2_norm_sq: grad_w_hat.l2_norm_sq(),
        grad_w_hat,
        varpi,
        radius: field.radius,
        retained_fraction,
        max_imaginary,
        grad_v_hat: None,
    })
}

/// `grad V_hat = -b_hat - (grad W_hat * mu_hat)` with the convolution taken
/// as a lattice sum times the cell volume; `grad W_hat` is zero off the box.
pub fn estimate_grad_v(drift: &SpatialField, grad_w: &SpatialField, density: &SpatialField) -> Result<SpatialField> {
    drift.same_shape(grad_w)?;
    if density.lattice != drift.lattice || density.comps != 1 {
        return Err(Error::GridMismatch("density field must be scalar on the drift lattice".into()));
    }
    let lat = drift.lattice;
    let (d, m) = (lat.dim, lat.m as isize);
    let comps = drift.comps;
    let half = m / 2;
    let vol = lat.cell_volume();
    let mut out = SpatialField::zeros(lat, comps);
    let mut ij = vec![0usize; d];
    let mut il = vec![0usize; d];
    for j in 0..lat.len() {
        lat.unflatten(j, &mut ij);
        for l in 0..lat.len() {
            let mu = density.values[l];
            if mu == 0.0 {
                continue;
            }
            lat.unflatten(l, &mut il);
            // x_j - x_l sits at lattice index (j - l) + M/2 on each axis
            let mut flat = 0isize;
            let mut inside = true;
            for c in 0..d {
                let q = ij[c] as isize - il[c] as isize + half;
                if !(0..m).contains(&q) {
                    inside = false;
                    break;
                }
                flat = flat * m + q;
            }
            if inside {
                let g = grad_w.at(flat as usize);
                for c in 0..comps {
                    out.values[j * comps + c] += g[c] * mu * vol;
                }
            }
        }
        for c in 0..comps {
            out.values[j * comps + c] = -drift.values[j * comps + c] - out.values[j * comps + c];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat1(m: usize) -> Lattice {
        Lattice::new(1, 4.0, m).unwrap()
    }

    #[test]
    fn roundtrip_transform() {
        let lat = Lattice::new(2, 3.0, 16).unwrap();
        let f = SpatialField::from_fn(lat, 2, |x, out| {
            out[0] = (-x[0] * x[0] - 0.5 * x[1] * x[1]).exp();
            out[1] = x[0].sin() * (-x[1] * x[1]).exp();
        });
        let (g, imag) = inverse_transform(&forward_transform(&f));
        let worst = f.values.iter().zip(&g.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12 && imag < 1e-12, "{worst} {imag}");
    }

    #[test]
    fn gaussian_transform_matches_closed_form() {
        let lat = Lattice::new(1, 8.0, 128).unwrap();
        let f = SpatialField::from_fn(lat, 1, |x, out| out[0] = (-PI * x[0] * x[0]).exp());
        let ft = forward_transform(&f);
        for m in 0..lat.points_per_axis() {
            let xi = lat.frequency(m);
            let want = (-PI * xi * xi).exp();
            assert!((ft.values[m] - Complex64::new(want, 0.0)).norm() < 1e-12, "m={m}");
        }
    }

    #[test]
    fn two_point_form_and_constants() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let form = LinearForm::new(TimeWeight::TwoPoint { a: 0.2, b: 0.7 }, &grid).unwrap();
        assert_eq!(form.active(), vec![2, 7]);
        let series: Vec<Vec<f64>> = (0..=10).map(|k| vec![k as f64]).collect();
        assert!((form.apply_series(&series).unwrap()[0] - (2.0 - 7.0) / 11.0).abs() < 1e-15);
        let constant = vec![vec![3.0]; 11];
        assert_eq!(form.apply_series(&constant).unwrap(), vec![0.0]);
    }

    #[test]
    fn bump_form_is_centered() {
        let grid = TimeGrid::new(2.0, 100).unwrap();
        for w in [TimeWeight::Bump { a: 0.2, b: 0.8 }, TimeWeight::BumpDerivative { a: 0.2, b: 0.8 }] {
            let form = LinearForm::new(w, &grid).unwrap();
            let s: f64 = form.coefficients().iter().sum();
            assert!(s.abs() < 1e-12, "{s}");
            assert!(form.active().iter().all(|&k| grid.time(k) > 0.4 && grid.time(k) < 1.6));
        }
        assert!(LinearForm::new(TimeWeight::Bump { a: 0.0, b: 0.8 }, &grid).is_err());
        assert!("bump:0.2,0.8".parse::<TimeWeight>().is_ok());
    }

    #[test]
    fn phasor_table_is_hermitian_and_accurate() {
        let lat = lat1(256);
        let mut t = vec![Complex64::new(0.0, 0.0); 256];
        phasors(&lat, 1.2345, &mut t);
        for m in 0..256 {
            let want = Complex64::from_polar(1.0, -2.0 * PI * lat.frequency(m) * 1.2345);
            assert!((t[m] - want).norm() < 1e-13);
        }
        for m in 1..256 {
            assert_eq!(t[256 - m], t[m].conj());
        }
    }

    #[test]
    fn full_threshold_gives_zero() {
        let lat = lat1(8);
        let num = FourierField { lattice: lat, comps: 1, values: vec![Complex64::new(1.0, 1.0); 8] };
        let den = FourierField { lattice: lat, comps: 1, values: vec![Complex64::new(0.01, 0.0); 8] };
        let (q, mask) = fourier_quotient(&num, &den, 1.0).unwrap();
        assert!(mask.iter().all(|m| !m));
        assert!(q.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn plug_in_with_zero_interaction_and_atom() {
        let lat = lat1(16);
        let b = SpatialField::from_fn(lat, 1, |x, out| out[0] = -x[0]);
        let zero = SpatialField::zeros(lat, 1);
        let mut atom = SpatialField::zeros(lat, 1);
        atom.values[8] = 1.0 / lat.cell_volume();
        let v = estimate_grad_v(&b, &zero, &atom).unwrap();
        assert!(v.values.iter().zip(&b.values).all(|(a, b)| *a == -b));
        let gw = SpatialField::from_fn(lat, 1, |x, out| out[0] = x[0].powi(3));
        let v = estimate_grad_v(&b, &gw, &atom).unwrap();
        for j in 0..16 {
            assert!((v.values[j] - (-b.values[j] - gw.values[j])).abs() < 1e-12);
        }
    }
}
