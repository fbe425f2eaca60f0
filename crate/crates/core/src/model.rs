//! Model specifications: drift, diffusion, initial law and time grid.

use std::fmt;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Uniform observation grid `0 = t_0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon T must be > 0, got {t_end}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
        }
        Ok(Self { t_end, n_steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    /// Grid time of index `k` (`time(n_steps) == T` exactly).
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.t_end / self.n_steps as f64
    }

    /// Index of the grid time nearest to `t`, ties resolved toward the
    /// earlier point.
    pub fn nearest_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.t_end) {
            return Err(Error::TimeOutOfRange { t, t_end: self.t_end });
        }
        let pos = t / self.dt();
        let lower = pos.floor();
        let k = if pos - lower > 0.5 { lower + 1.0 } else { lower };
        Ok((k as usize).min(self.n_steps))
    }
}

/// A snapshot of particle positions, i.e. the support of an empirical
/// measure with uniform weights.
///
/// The mean is computed lazily and cached, so drifts that only depend on
/// low-order moments of the measure cost O(1) per particle.
pub struct Cloud {
    dim: usize,
    coords: Vec<f64>,
    mean: OnceLock<Vec<f64>>,
}

impl Cloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim, got: coords.len() % dim });
        }
        Ok(Self { dim, coords, mean: OnceLock::new() })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).ok_or(Error::EmptyMeasure)?;
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.coords.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.get_or_init(|| {
            let mut m = vec![0.0; self.dim];
            for p in self.points() {
                for (acc, v) in m.iter_mut().zip(p) {
                    *acc += v;
                }
            }
            let n = self.len().max(1) as f64;
            m.iter_mut().for_each(|v| *v /= n);
            m
        })
    }
}

impl Clone for Cloud {
    fn clone(&self) -> Self {
        Self { dim: self.dim, coords: self.coords.clone(), mean: OnceLock::new() }
    }
}

impl fmt::Debug for Cloud {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cloud").field("dim", &self.dim).field("len", &self.len()).finish()
    }
}

/// `x -> f(x)` vector field on `R^d`, written into `out`.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `(t, x, cloud) -> b(t, x, mu)` written into `out`.
pub type MeasureDrift = Arc<dyn Fn(f64, &[f64], &Cloud, &mut [f64]) + Send + Sync>;

/// `(t, x) -> sigma(t, x)` as a row-major `d x d` matrix written into `out`.
pub type MatrixField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Drift coefficient `b(t, x, mu)`.
#[derive(Clone)]
pub enum DriftModel {
    /// Arbitrary Lipschitz dependence on the measure, supplied as a callable.
    GeneralLipschitz {
        dim: usize,
        drift: MeasureDrift,
        /// Declared Lipschitz constant in `x`, if known.
        lipschitz: Option<f64>,
    },
    /// `b(x, mu) = -grad_v(x) - (grad_w * mu)(x)`.
    VlasovPair {
        dim: usize,
        grad_v: VectorField,
        grad_w: VectorField,
        /// `grad_w` vanishes outside the ball of this radius
        /// (`f64::INFINITY` when it is not compactly supported).
        support_radius: f64,
        /// Closed form of `grad_w` when it is a one-dimensional piecewise
        /// polynomial; enables [`crate::simulator::ForceEval::SortedMoments`].
        polynomial: Option<PolynomialForce>,
    },
}

impl fmt::Debug for DriftModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftModel::GeneralLipschitz { dim, lipschitz, .. } => f
                .debug_struct("GeneralLipschitz")
                .field("dim", dim)
                .field("lipschitz", lipschitz)
                .finish(),
            DriftModel::VlasovPair { dim, support_radius, polynomial, .. } => f
                .debug_struct("VlasovPair")
                .field("dim", dim)
                .field("support_radius", support_radius)
                .field("polynomial", polynomial)
                .finish(),
        }
    }
}

impl DriftModel {
    pub fn vlasov(dim: usize, grad_v: VectorField, grad_w: VectorField, support_radius: f64) -> Result<Self> {
        if !(support_radius >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "support radius must be >= 0, got {support_radius}"
            )));
        }
        Ok(DriftModel::VlasovPair { dim, grad_v, grad_w, support_radius, polynomial: None })
    }

    /// One-dimensional Vlasov drift whose interaction force is `force`.
    pub fn vlasov_polynomial(grad_v: VectorField, force: PolynomialForce) -> Result<Self> {
        force.validate()?;
        Ok(DriftModel::VlasovPair {
            dim: 1,
            grad_v,
            grad_w: force.field(),
            support_radius: force.radius,
            polynomial: Some(force),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            DriftModel::GeneralLipschitz { dim, .. } | DriftModel::VlasovPair { dim, .. } => *dim,
        }
    }

    /// Support radius of the interaction force, `None` for non-Vlasov drifts.
    pub fn interaction_radius(&self) -> Option<f64> {
        match self {
            DriftModel::VlasovPair { support_radius, .. } => Some(*support_radius),
            DriftModel::GeneralLipschitz { .. } => None,
        }
    }

    /// Evaluates the drift into `out`, summing pair forces over the listed
    /// cloud indices only (the normalisation still uses the full cloud size).
    pub(crate) fn eval_into(
        &self,
        t: f64,
        x: &[f64],
        cloud: &Cloud,
        neighbours: Option<&[usize]>,
        out: &mut [f64],
    ) -> Result<()> {
        if cloud.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        match self {
            DriftModel::GeneralLipschitz { drift, .. } => drift(t, x, cloud, out),
            DriftModel::VlasovPair { dim, grad_v, grad_w, .. } => {
                let d = *dim;
                let mut diff = [0.0; 8];
                let mut force = [0.0; 8];
                let (diff, force) = if d <= 8 {
                    (&mut diff[..d], &mut force[..d])
                } else {
                    return self.eval_vlasov_heap(x, cloud, neighbours, out);
                };
                let mut acc = [0.0; 8];
                let acc = &mut acc[..d];
                let mut add = |j: usize| {
                    for ((dv, xi), yj) in diff.iter_mut().zip(x).zip(cloud.point(j)) {
                        *dv = xi - yj;
                    }
                    grad_w(diff, force);
                    for (a, f) in acc.iter_mut().zip(force.iter()) {
                        *a += f;
                    }
                };
                match neighbours {
                    Some(idx) => idx.iter().for_each(|&j| add(j)),
                    None => (0..cloud.len()).for_each(&mut add),
                }
                grad_v(x, out);
                let n = cloud.len() as f64;
                for (o, a) in out.iter_mut().zip(acc.iter()) {
                    *o = -*o - a / n;
                }
            }
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::DriftOverflow)
        }
    }

    fn eval_vlasov_heap(&self, x: &[f64], cloud: &Cloud, neighbours: Option<&[usize]>, out: &mut [f64]) -> Result<()> {
        let DriftModel::VlasovPair { dim, grad_v, grad_w, .. } = self else {
            unreachable!()
        };
        let d = *dim;
        let mut diff = vec![0.0; d];
        let mut force = vec![0.0; d];
        let mut acc = vec![0.0; d];
        let all: Vec<usize>;
        let idx = match neighbours {
            Some(idx) => idx,
            None => {
                all = (0..cloud.len()).collect();
                &all
            }
        };
        for &j in idx {
            for ((dv, xi), yj) in diff.iter_mut().zip(x).zip(cloud.point(j)) {
                *dv = xi - yj;
            }
            grad_w(&diff, &mut force);
            for (a, f) in acc.iter_mut().zip(&force) {
                *a += f;
            }
        }
        grad_v(x, out);
        let n = cloud.len() as f64;
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = -*o - a / n;
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::DriftOverflow)
        }
    }
}

/// `b(t, x, cloud)` for the empirical measure of `cloud`.
pub fn evaluate_drift(model: &DriftModel, t: f64, x: &[f64], cloud: &Cloud) -> Result<Vec<f64>> {
    if cloud.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    if cloud.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: cloud.dim() });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("drift argument"));
    }
    let mut out = vec![0.0; model.dim()];
    model.eval_into(t, x, cloud, None, &mut out)?;
    Ok(out)
}

/// Diffusion coefficient `sigma(t, x)`; never depends on the measure.
#[derive(Clone)]
pub enum DiffusionModel {
    /// `sigma = s * Id`. `s = 0` is accepted for frozen / deterministic runs
    /// but fails [`DiffusionModel::check_ellipticity`].
    ConstantScalar(f64),
    StateDependent {
        sigma: MatrixField,
        /// Declared ellipticity bounds `sigma_minus^2 |y|^2 <= y' c y <= sigma_plus^2 |y|^2`.
        sigma_minus: f64,
        sigma_plus: f64,
    },
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionModel::ConstantScalar(s) => f.debug_tuple("ConstantScalar").field(s).finish(),
            DiffusionModel::StateDependent { sigma_minus, sigma_plus, .. } => f
                .debug_struct("StateDependent")
                .field("sigma_minus", sigma_minus)
                .field("sigma_plus", sigma_plus)
                .finish(),
        }
    }
}

impl DiffusionModel {
    pub fn constant(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(DiffusionModel::ConstantScalar(sigma))
    }

    pub fn state_dependent(sigma: MatrixField, sigma_minus: f64, sigma_plus: f64) -> Result<Self> {
        if !(sigma_minus > 0.0 && sigma_plus >= sigma_minus && sigma_plus.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ellipticity bounds must satisfy 0 < sigma_- <= sigma_+, got ({sigma_minus}, {sigma_plus})"
            )));
        }
        Ok(DiffusionModel::StateDependent { sigma, sigma_minus, sigma_plus })
    }

    /// Returns `(sigma_-, sigma_+)`.
    pub fn ellipticity_bounds(&self) -> (f64, f64) {
        match self {
            DiffusionModel::ConstantScalar(s) => (*s, *s),
            DiffusionModel::StateDependent { sigma_minus, sigma_plus, .. } => (*sigma_minus, *sigma_plus),
        }
    }

    pub fn check_ellipticity(&self) -> Result<()> {
        let (lo, _) = self.ellipticity_bounds();
        if lo > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter("diffusion is not uniformly elliptic".into()))
        }
    }

    /// Adds `sigma(t, x) xi * scale` to `out`.
    pub(crate) fn apply_noise(&self, t: f64, x: &[f64], xi: &[f64], scale: f64, scratch: &mut Vec<f64>, out: &mut [f64]) {
        match self {
            DiffusionModel::ConstantScalar(s) => {
                let k = s * scale;
                for (o, z) in out.iter_mut().zip(xi) {
                    *o += k * z;
                }
            }
            DiffusionModel::StateDependent { sigma, .. } => {
                let d = x.len();
                scratch.resize(d * d, 0.0);
                sigma(t, x, scratch);
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &scratch[r * d..(r + 1) * d];
                    *o += scale * row.iter().zip(xi).map(|(a, z)| a * z).sum::<f64>();
                }
            }
        }
    }
}

/// Law of the i.i.d. initial positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    /// Independent coordinates `N(mean_k, var_k)`.
    GaussianIid { mean: Vec<f64>, var: Vec<f64> },
    PointMass(Vec<f64>),
    /// Uniform resampling from a fixed set of points.
    Empirical(Vec<Vec<f64>>),
}

impl InitialLaw {
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != var.len() {
            return Err(Error::InvalidParameter("gaussian mean/variance lengths differ".into()));
        }
        if !var.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter("gaussian variances must be > 0".into()));
        }
        Ok(InitialLaw::GaussianIid { mean, var })
    }

    /// Reads whitespace-separated points, one per line (`#` starts a comment).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut points: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let p = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            if let Some(first) = points.first() {
                if first.len() != p.len() {
                    return Err(Error::DimensionMismatch { expected: first.len(), got: p.len() });
                }
            }
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("initial points"));
            }
            points.push(p);
        }
        if points.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        Ok(InitialLaw::Empirical(points))
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::GaussianIid { mean, .. } => mean.len(),
            InitialLaw::PointMass(x) => x.len(),
            InitialLaw::Empirical(p) => p.first().map_or(0, Vec::len),
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialLaw::GaussianIid { mean, var } => {
                for ((o, m), v) in out.iter_mut().zip(mean).zip(var) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = m + v.sqrt() * z;
                }
            }
            InitialLaw::PointMass(x) => out.copy_from_slice(x),
            InitialLaw::Empirical(points) => {
                let j = rng.random_range(0..points.len());
                out.copy_from_slice(&points[j]);
            }
        }
    }
}

/// One-dimensional linear Vlasov model with `V(x) = theta x^2 / 2` and
/// `W(x) = lambda x^2 / 2`, started from `N(m0, v0)`:
///
/// `dX = -theta X dt - lambda (X - E X) dt + sigma dB`.
///
/// Its limit law is Gaussian with explicit moments, which makes it the
/// reference oracle for the simulator and the density / drift estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldOu {
    pub theta: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub m0: f64,
    pub v0: f64,
}

impl MeanFieldOu {
    pub fn new(theta: f64, lambda: f64, sigma: f64, m0: f64, v0: f64) -> Result<Self> {
        let p = Self { theta, lambda, sigma, m0, v0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.theta >= 0.0
            && self.lambda >= 0.0
            && self.sigma >= 0.0
            && self.v0 >= 0.0
            && [self.theta, self.lambda, self.sigma, self.m0, self.v0].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid mean-field OU parameters {self:?}")))
        }
    }

    /// Mean and variance of the limit law at time `t` (`t = inf` allowed).
    pub fn moments(&self, t: f64) -> Result<(f64, f64)> {
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
        }
        let mean = if self.theta == 0.0 { self.m0 } else { self.m0 * (-self.theta * t).exp() };
        let a = self.theta + self.lambda;
        let s2 = self.sigma * self.sigma;
        let var = if a == 0.0 {
            self.v0 + s2 * t
        } else {
            let decay = (-2.0 * a * t).exp();
            self.v0 * decay - s2 * (-2.0 * a * t).exp_m1() / (2.0 * a)
        };
        Ok((mean, var))
    }

    /// Mean and variance after `k` Euler steps of size `dt` in the large-N
    /// limit. The discretized law stays Gaussian, so these are exact targets
    /// for the simulated system at that step size.
    pub fn euler_moments(&self, dt: f64, k: usize) -> Result<(f64, f64)> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let a = self.theta + self.lambda;
        let (mut m, mut v) = (self.m0, self.v0);
        for _ in 0..k {
            m *= 1.0 - self.theta * dt;
            v = (1.0 - a * dt).powi(2) * v + self.sigma * self.sigma * dt;
        }
        Ok((m, v))
    }

    /// Ground-truth drift `b(t, x, mu_t) = -theta x - lambda (x - m_t)`.
    pub fn drift_at(&self, t: f64, x: f64) -> Result<f64> {
        let (m, _) = self.moments(t)?;
        Ok(-self.theta * x - self.lambda * (x - m))
    }

    /// Limit density `mu_t(x)`.
    pub fn density_at(&self, t: f64, x: f64) -> Result<f64> {
        let (m, v) = self.moments(t)?;
        if v <= 0.0 {
            return Err(Error::InvalidParameter("degenerate limit law has no density".into()));
        }
        Ok((-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
    }

    /// Drift as a cloud-mean closure: `O(1)` per particle once the cloud
    /// mean is cached. Algebraically identical to [`MeanFieldOu::vlasov_drift`].
    pub fn drift_model(&self) -> DriftModel {
        let (theta, lambda) = (self.theta, self.lambda);
        DriftModel::GeneralLipschitz {
            dim: 1,
            drift: Arc::new(move |_t, x, cloud, out| {
                out[0] = -theta * x[0] - lambda * (x[0] - cloud.mean()[0]);
            }),
            lipschitz: Some(theta + lambda),
        }
    }

    /// The same drift as an explicit pair interaction (quadratic cost).
    pub fn vlasov_drift(&self) -> DriftModel {
        let (theta, lambda) = (self.theta, self.lambda);
        DriftModel::VlasovPair {
            dim: 1,
            grad_v: Arc::new(move |x, out| out[0] = theta * x[0]),
            grad_w: Arc::new(move |x, out| out[0] = lambda * x[0]),
            support_radius: f64::INFINITY,
            polynomial: None,
        }
    }

    pub fn diffusion(&self) -> DiffusionModel {
        DiffusionModel::ConstantScalar(self.sigma)
    }

    pub fn initial_law(&self) -> InitialLaw {
        if self.v0 > 0.0 {
            InitialLaw::GaussianIid { mean: vec![self.m0], var: vec![self.v0] }
        } else {
            InitialLaw::PointMass(vec![self.m0])
        }
    }
}

/// Compactly supported smooth interaction force
/// `grad W(x) = strength * x * (1 - |x|^2 / r^2)^2` for `|x| < r`, zero otherwise.
pub fn bump_interaction(strength: f64, radius: f64) -> VectorField {
    let r2 = radius * radius;
    Arc::new(move |x, out| {
        let s: f64 = x.iter().map(|v| v * v).sum();
        let w = if s < r2 { (1.0 - s / r2).powi(2) } else { 0.0 };
        for (o, v) in out.iter_mut().zip(x) {
            *o = strength * v * w;
        }
    })
}

/// One-dimensional pair force `sum_p c_p u^p` for `|u| < r` and zero
/// otherwise. Sums of such forces over a cloud reduce to windowed power sums
/// of the sorted positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialForce {
    pub coeffs: Vec<f64>,
    pub radius: f64,
}

impl PolynomialForce {
    /// The one-dimensional [`bump_interaction`]:
    /// `s u (1 - u^2/r^2)^2 = s u - 2 s u^3 / r^2 + s u^5 / r^4`.
    pub fn bump(strength: f64, radius: f64) -> Self {
        let r2 = radius * radius;
        Self { coeffs: vec![0.0, strength, 0.0, -2.0 * strength / r2, 0.0, strength / (r2 * r2)], radius }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("force radius must be finite and > 0, got {}", self.radius)));
        }
        if self.coeffs.is_empty() || !self.coeffs.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter("force coefficients must be finite and nonempty".into()));
        }
        Ok(())
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u.abs() >= self.radius {
            return 0.0;
        }
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    pub fn field(&self) -> VectorField {
        let force = self.clone();
        Arc::new(move |x, out| out[0] = force.eval(x[0]))
    }
}

/// `grad V(x) = k x`.
pub fn linear_confinement(k: f64) -> VectorField {
    Arc::new(move |x, out| {
        for (o, v) in out.iter_mut().zip(x) {
            *o = k * v;
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_field() -> VectorField {
        Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0))
    }

    #[test]
    fn polynomial_bump_matches_bump_field() {
        let poly = PolynomialForce::bump(1.7, 0.8);
        let field = bump_interaction(1.7, 0.8);
        let mut out = [0.0];
        for i in -100..=100 {
            let u = i as f64 * 0.01;
            field(&[u], &mut out);
            assert!((poly.eval(u) - out[0]).abs() < 1e-14, "u = {u}");
        }
    }

    #[test]
    fn zero_fields_give_zero_drift() {
        let m = DriftModel::vlasov(2, zero_field(), zero_field(), 0.0).unwrap();
        let cloud = Cloud::from_points(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        assert_eq!(evaluate_drift(&m, 0.3, &[4.0, -1.0], &cloud).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_vlasov_by_hand() {
        let m = DriftModel::vlasov(1, linear_confinement(1.0), linear_confinement(1.0), f64::INFINITY).unwrap();
        let cloud = Cloud::from_points(&[vec![0.0], vec![2.0]]).unwrap();
        // -1 - ((1 - 0) + (1 - 2)) / 2
        assert_eq!(evaluate_drift(&m, 0.0, &[1.0], &cloud).unwrap(), vec![-1.0]);
    }

    #[test]
    fn pair_terms_vanish_outside_support() {
        let m = DriftModel::vlasov(1, linear_confinement(0.7), bump_interaction(3.0, 1.0), 1.0).unwrap();
        let cloud = Cloud::from_points(&[vec![0.0], vec![0.5]]).unwrap();
        assert_eq!(evaluate_drift(&m, 0.0, &[5.0], &cloud).unwrap(), vec![-0.7 * 5.0]);
    }

    #[test]
    fn empty_cloud_is_rejected() {
        let m = DriftModel::vlasov(1, zero_field(), zero_field(), 0.0).unwrap();
        let cloud = Cloud::new(1, vec![]).unwrap();
        assert!(matches!(evaluate_drift(&m, 0.0, &[0.0], &cloud), Err(Error::EmptyMeasure)));
    }

    #[test]
    fn overflowing_drift_is_reported() {
        let m = DriftModel::GeneralLipschitz {
            dim: 1,
            drift: Arc::new(|_, _, _, out| out[0] = f64::INFINITY),
            lipschitz: None,
        };
        let cloud = Cloud::from_points(&[vec![0.0]]).unwrap();
        assert!(matches!(evaluate_drift(&m, 0.0, &[0.0], &cloud), Err(Error::DriftOverflow)));
    }

    #[test]
    fn mfou_stationary_and_brownian_limits() {
        let ou = MeanFieldOu::new(1.0, 0.0, 2f64.sqrt(), 0.0, 1.0).unwrap();
        let (m, v) = ou.moments(f64::INFINITY).unwrap();
        assert_eq!(m, 0.0);
        assert!((v - 1.0).abs() < 1e-15);
        let bm = MeanFieldOu::new(0.0, 0.0, 1.0, 2.0, 0.0).unwrap();
        assert_eq!(bm.moments(3.0).unwrap(), (2.0, 3.0));
        assert!(bm.moments(-1.0).is_err());
    }

    #[test]
    fn mfou_moments_match_rk4_integration_of_moment_odes() {
        // m' = -theta m, v' = -2 (theta + lambda) v + sigma^2
        let p = MeanFieldOu::new(1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        let rhs = |y: [f64; 2]| [-p.theta * y[0], -2.0 * (p.theta + p.lambda) * y[1] + p.sigma * p.sigma];
        let mut y = [p.m0, p.v0];
        let steps = 7000;
        let h = 0.7 / steps as f64;
        for _ in 0..steps {
            let k1 = rhs(y);
            let k2 = rhs([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = rhs([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = rhs([y[0] + h * k3[0], y[1] + h * k3[1]]);
            for c in 0..2 {
                y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }
        let (m, v) = p.moments(0.7).unwrap();
        assert!((m - y[0]).abs() < 1e-12, "{m} vs {}", y[0]);
        assert!((v - y[1]).abs() < 1e-12, "{v} vs {}", y[1]);
    }

    #[test]
    fn mfou_moments_satisfy_odes_by_finite_differences() {
        let p = MeanFieldOu::new(0.8, 0.6, 1.3, -0.4, 0.2).unwrap();
        let eps = 1e-5;
        for &t in &[0.1, 0.5, 1.0, 2.5] {
            let (m_hi, v_hi) = p.moments(t + eps).unwrap();
            let (m_lo, v_lo) = p.moments(t - eps).unwrap();
            let (m, v) = p.moments(t).unwrap();
            let dm = (m_hi - m_lo) / (2.0 * eps);
            let dv = (v_hi - v_lo) / (2.0 * eps);
            assert!((dm + p.theta * m).abs() < 1e-8);
            assert!((dv + 2.0 * (p.theta + p.lambda) * v - p.sigma * p.sigma).abs() < 1e-8);
        }
    }

    #[test]
    fn mfou_drift_examples() {
        let ou = MeanFieldOu::new(1.0, 0.0, 1.0, 3.0, 1.0).unwrap();
        assert_eq!(ou.drift_at(0.4, 2.0).unwrap(), -2.0);
        let attract = MeanFieldOu::new(0.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(attract.drift_at(5.0, 1.0).unwrap(), -1.0);
        let p = MeanFieldOu::new(1.0, 2.0, 1.0, 1.0, 1.0).unwrap();
        let expected = -0.3 - 2.0 * (0.3 - (-0.5f64).exp());
        assert!((p.drift_at(0.5, 0.3).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn mean_closure_matches_pairwise_form() {
        let p = MeanFieldOu::new(0.7, 1.3, 1.0, 0.0, 1.0).unwrap();
        let cloud = Cloud::from_points(&[vec![0.3], vec![-1.2], vec![2.5], vec![0.0]]).unwrap();
        for &x in &[-2.0, 0.1, 3.0] {
            let a = evaluate_drift(&p.drift_model(), 0.0, &[x], &cloud).unwrap()[0];
            let b = evaluate_drift(&p.vlasov_drift(), 0.0, &[x], &cloud).unwrap()[0];
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn nearest_index_ties_go_early() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.nearest_index(0.125).unwrap(), 0);
        assert_eq!(g.nearest_index(0.13).unwrap(), 1);
        assert_eq!(g.nearest_index(1.0).unwrap(), 4);
        assert!(g.nearest_index(1.01).is_err());
        let fine = TimeGrid::new(1.0, 1000).unwrap();
        assert_eq!(fine.nearest_index(0.5001).unwrap(), (0.5001f64 / 1e-3).round() as usize);
    }

    #[test]
    fn ellipticity_gate() {
        assert!(DiffusionModel::constant(0.0).unwrap().check_ellipticity().is_err());
        assert!(DiffusionModel::constant(0.5).unwrap().check_ellipticity().is_ok());
        let id: MatrixField = Arc::new(|_, _, out| out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]));
        assert!(DiffusionModel::state_dependent(id.clone(), 0.0, 1.0).is_err());
        assert!(DiffusionModel::state_dependent(id, 1.0, 1.0).is_ok());
    }

    #[test]
    fn initial_law_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("init.txt");
        std::fs::write(&path, "# two points\n0.5 1.0\n-1 2\n").unwrap();
        let law = InitialLaw::from_file(&path).unwrap();
        assert_eq!(law, InitialLaw::Empirical(vec![vec![0.5, 1.0], vec![-1.0, 2.0]]));
        std::fs::write(&path, "0.5 1.0\n-1\n").unwrap();
        assert!(InitialLaw::from_file(&path).is_err());
    }
}
