//! Wasserstein distances, Bernstein tail envelopes and rate fits.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::quadrature::GaussLegendre;
use crate::rng::particle_stream;
use crate::{Error, Result};

fn check_sorted(a: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("W1 sample"));
    }
    if a.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Unsorted);
    }
    Ok(())
}

/// Exact `W1` between two sorted samples in dimension one, as
/// `int_0^1 |Qa(u) - Qb(u)| du` over the merged quantile breakpoints.
pub fn w1_exact_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sorted(a)?;
    check_sorted(b)?;
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / a.len() as f64);
    }
    let (na, nb) = (a.len() as u128, b.len() as u128);
    // breakpoints i/na and j/nb, compared exactly by cross-multiplication
    let (mut i, mut j) = (0u128, 0u128);
    let mut prev = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) * nb;
        let next_b = (j + 1) * na;
        let cut = next_a.min(next_b);
        let u = cut as f64 / (na * nb) as f64;
        total += (u - prev) * (a[i as usize] - b[j as usize]).abs();
        prev = u;
        if next_a == cut {
            i += 1;
        }
        if next_b == cut {
            j += 1;
        }
    }
    Ok(total)
}

/// `W1` between a sorted sample and a continuous law given by its CDF,
/// `int |F_n(x) - F(x)| dx`. The tails are integrated until the CDF is
/// within `1e-15` of 0 or 1.
pub fn w1_to_cdf<F: Fn(f64) -> f64>(a: &[f64], cdf: F) -> Result<f64> {
    check_sorted(a)?;
    let n = a.len() as f64;
    let gl = GaussLegendre::new(20);
    let span = (a[a.len() - 1] - a[0]).max(1.0);
    let mut left = a[0] - span;
    while cdf(left) > 1e-15 && left > a[0] - 1e6 * span {
        left -= span;
    }
    let mut right = a[a.len() - 1] + span;
    while 1.0 - cdf(right) > 1e-15 && right < a[a.len() - 1] + 1e6 * span {
        right += span;
    }
    let mut total = gl.integrate(&cdf, left, a[0], 64);
    total += gl.integrate(|x| 1.0 - cdf(x), a[a.len() - 1], right, 64);
    for (i, w) in a.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let level = (i + 1) as f64 / n;
        let f = |x: f64| (level - cdf(x)).abs();
        // F is monotone, so level - F changes sign at most once
        let (flo, fhi) = (level - cdf(lo), level - cdf(hi));
        if flo * fhi < 0.0 {
            let (mut l, mut h) = (lo, hi);
            for _ in 0..80 {
                let mid = 0.5 * (l + h);
                if (level - cdf(mid)) * flo > 0.0 {
                    l = mid;
                } else {
                    h = mid;
                }
            }
            let root = 0.5 * (l + h);
            total += gl.integrate(f, lo, root, 1) + gl.integrate(f, root, hi, 1);
        } else {
            total += gl.integrate(f, lo, hi, 1);
        }
    }
    Ok(total)
}

/// Sliced `W1` proxy in `d >= 2`: the mean of exact one-dimensional `W1`
/// over `n_projections` random unit directions drawn from `seed`.
pub fn w1_sliced(a: &[Vec<f64>], b: &[Vec<f64>], n_projections: usize, seed: u64) -> Result<f64> {
    let d = a.first().map(Vec::len).ok_or(Error::EmptyMeasure)?;
    if b.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if a.iter().chain(b).any(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: a.iter().chain(b).map(Vec::len).find(|l| *l != d).unwrap_or(d) });
    }
    if n_projections == 0 {
        return Err(Error::InvalidParameter("need at least one projection".into()));
    }
    let mut rng = particle_stream(seed, 0);
    let mut u = vec![0.0; d];
    let mut pa = vec![0.0; a.len()];
    let mut pb = vec![0.0; b.len()];
    let mut total = 0.0;
    for _ in 0..n_projections {
        let norm = loop {
            u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break norm;
            }
        };
        u.iter_mut().for_each(|v| *v /= norm);
        let project = |p: &Vec<f64>| p.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>();
        for (o, p) in pa.iter_mut().zip(a) {
            *o = project(p);
        }
        for (o, p) in pb.iter_mut().zip(b) {
            *o = project(p);
        }
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        total += w1_exact_1d(&pa, &pb)?;
    }
    Ok(total / n_projections as f64)
}

/// Fitted Bernstein envelope `kappa1 exp(-kappa2 N x^2 / (v + m x))` for
/// the exceedance probabilities `P(|D| >= x)` of replicate deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEnvelope {
    pub kappa1: f64,
    pub kappa2: f64,
    pub v: f64,
    pub m: f64,
    pub n: usize,
    pub replicates: usize,
    pub levels: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Every empirical point lies below 1.5 times the envelope.
    pub valid: bool,
    /// No spread in the deviations, hence no fit.
    pub degenerate: bool,
}

impl TailEnvelope {
    pub fn envelope(&self, x: f64) -> f64 {
        self.kappa1 * (-self.kappa2 * self.exponent_arg(x)).exp()
    }

    fn exponent_arg(&self, x: f64) -> f64 {
        self.n as f64 * x * x / (self.v + self.m * x)
    }
}

pub const MIN_REPLICATES: usize = 200;
const LEVELS: usize = 20;

/// Fits a Bernstein envelope to the two-sided exceedance curve of the
/// deviations. Levels run from 0 to the fifth-largest `|D|`, so every level
/// has at least five exceedances. The line `log p = log kappa1 - kappa2 z`,
/// `z = N x^2 / (v + m x)`, is fitted by least squares through the vertices
/// of the upper concave hull of the points `(z, log p)`: an envelope is an
/// upper bound, and the hull discards levels dominated by their neighbours.
pub fn fit_tail_envelope(deviations: &[f64], v: f64, m: f64, n: usize) -> Result<TailEnvelope> {
    if deviations.len() < MIN_REPLICATES {
        return Err(Error::TooFewReplicates { needed: MIN_REPLICATES, got: deviations.len() });
    }
    if !(v > 0.0 && m > 0.0) {
        return Err(Error::InvalidParameter(format!("variance and sup proxies must be > 0, got v={v}, m={m}")));
    }
    if !deviations.iter().all(|d| d.is_finite()) {
        return Err(Error::NonFinite("deviation"));
    }
    let mut abs: Vec<f64> = deviations.iter().map(|d| d.abs()).collect();
    abs.sort_by(|a, b| b.total_cmp(a));
    let x_max = abs[4];
    let mut env = TailEnvelope {
        kappa1: 0.0,
        kappa2: 0.0,
        v,
        m,
        n,
        replicates: deviations.len(),
        levels: Vec::new(),
        log_probs: Vec::new(),
        valid: false,
        degenerate: false,
    };
    if !(x_max > 0.0) {
        env.degenerate = true;
        return Ok(env);
    }
    let total = deviations.len() as f64;
    for j in 0..LEVELS {
        let x = j as f64 * x_max / (LEVELS - 1) as f64;
        let count = abs.iter().filter(|d| **d >= x).count();
        env.levels.push(x);
        env.log_probs.push((count as f64 / total).ln());
    }
    let pts: Vec<(f64, f64)> = env.levels.iter().map(|x| env.exponent_arg(*x)).zip(env.log_probs.iter().cloned()).collect();
    let hull = upper_hull(&pts);
    let (slope, intercept) = if hull.len() >= 2 {
        let xs: Vec<f64> = hull.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = hull.iter().map(|p| p.1).collect();
        ols(&xs, &ys).map(|f| (f.slope, f.intercept))?
    } else {
        (0.0, hull[0].1)
    };
    env.kappa1 = intercept.exp();
    env.kappa2 = -slope;
    env.valid = env.kappa2 > 0.0
        && env
            .levels
            .iter()
            .zip(&env.log_probs)
            .all(|(x, lp)| lp.exp() <= 1.5 * env.envelope(*x) * (1.0 + 1e-12));
    Ok(env)
}

/// Upper concave hull of points sorted by abscissa (monotone chain).
fn upper_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in points {
        if let Some(last) = hull.last() {
            if p.0 == last.0 {
                if p.1 > last.1 {
                    hull.pop();
                } else {
                    continue;
                }
            }
        }
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

fn ols(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("regression needs at least two distinct abscissae".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if xs.len() > 2 {
        let ssr: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LinearFit { slope, intercept, stderr })
}

/// OLS of `log error` on `log N`.
pub fn rate_slope(ns: &[f64], errors: &[f64]) -> Result<LinearFit> {
    if ns.len() != errors.len() {
        return Err(Error::DimensionMismatch { expected: ns.len(), got: errors.len() });
    }
    if ns.len() < 3 {
        return Err(Error::InvalidParameter(format!("rate fit needs >= 3 points, got {}", ns.len())));
    }
    if !ns.iter().chain(errors).all(|v| *v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter("rate fit needs finite positive values".into()));
    }
    let xs: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    ols(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w1_basics() {
        assert_eq!(w1_exact_1d(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(w1_exact_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w1_exact_1d(&[0.0, 1.0, 2.0, 3.0], &[0.5, 1.5, 2.5, 3.5]).unwrap(), 0.5);
        assert!(matches!(w1_exact_1d(&[1.0, 0.0], &[0.0, 1.0]), Err(Error::Unsorted)));
        // unequal sizes: {0, 1} vs {0.5} costs 0.5
        assert!((w1_exact_1d(&[0.0, 1.0], &[0.5]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn w1_against_uniform_cdf() {
        // single atom at 0.5 against U(0, 1): int |1{x >= 0.5} - x| = 1/4
        let w = w1_to_cdf(&[0.5], |x: f64| x.clamp(0.0, 1.0)).unwrap();
        assert!((w - 0.25).abs() < 1e-12, "{w}");
    }

    #[test]
    fn rate_slope_power_law() {
        let ns = [512.0, 1024.0, 2048.0, 4096.0];
        let errs: Vec<f64> = ns.iter().map(|n: &f64| 3.0 * n.powf(-0.4)).collect();
        let fit = rate_slope(&ns, &errs).unwrap();
        assert!((fit.slope + 0.4).abs() < 1e-12);
        let flat = rate_slope(&ns, &[0.2; 4]).unwrap();
        assert!(flat.slope.abs() < 1e-12);
        assert!(rate_slope(&ns[..2], &errs[..2]).is_err());
        assert!(rate_slope(&ns, &[0.1, -0.1, 0.1, 0.1]).is_err());
    }

    #[test]
    fn zero_deviations_are_degenerate() {
        let env = fit_tail_envelope(&[0.0; 300], 1.0, 1.0, 100).unwrap();
        assert!(env.degenerate && !env.valid);
        assert!(matches!(fit_tail_envelope(&[0.0; 10], 1.0, 1.0, 100), Err(Error::TooFewReplicates { .. })));
    }

    #[test]
    fn hull_is_concave_upper() {
        let pts = [(0.0, 0.0), (1.0, -2.0), (2.0, -1.0), (3.0, -3.0)];
        assert_eq!(upper_hull(&pts), vec![(0.0, 0.0), (2.0, -1.0), (3.0, -3.0)]);
    }
}
