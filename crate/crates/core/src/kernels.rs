//! Compactly supported kernels of prescribed order.
//!
//! A one-dimensional kernel of order `l` is built as `K(x) = p(x) b(x)` on the
//! support of a base density `b` (box, Epanechnikov or quartic), where `p` is
//! the even polynomial of lowest degree such that
//! `int K = 1` and `int x^k K(x) dx = 0` for `k = 1..l-1`.
//! Odd moments vanish by symmetry, so only the even conditions are solved.
//!
//! Multivariate kernels are tensor products of one-dimensional factors. The
//! squared `L2` norm, sup norm and `L1` norm are cached at construction.
//!
//! Kernels are addressable by string ids `"<base>:<order>"`, for example
//! `"epa:2"`, `"box:1"` or `"quartic:4"`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::quadrature::GaussLegendre;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelBase {
    /// Uniform density on `[-1/2, 1/2]`.
    Box,
    /// `3/4 (1 - x^2)` on `[-1, 1]`.
    Epanechnikov,
    /// `15/16 (1 - x^2)^2` on `[-1, 1]`.
    Quartic,
}

impl KernelBase {
    pub fn id(self) -> &'static str {
        match self {
            KernelBase::Box => "box",
            KernelBase::Epanechnikov => "epa",
            KernelBase::Quartic => "quartic",
        }
    }

    pub fn support(self) -> (f64, f64) {
        match self {
            KernelBase::Box => (-0.5, 0.5),
            KernelBase::Epanechnikov | KernelBase::Quartic => (-1.0, 1.0),
        }
    }

    fn coefficients(self) -> Vec<f64> {
        match self {
            KernelBase::Box => vec![1.0],
            KernelBase::Epanechnikov => vec![0.75, 0.0, -0.75],
            KernelBase::Quartic => vec![15.0 / 16.0, 0.0, -30.0 / 16.0, 0.0, 15.0 / 16.0],
        }
    }

    /// Largest supported order. The caps grow with the smoothness of the base
    /// so that an infeasible order always has a suggestion; all orders up to
    /// the cap meet the moment conditions to `1e-10` under independent
    /// quadrature.
    pub fn max_order(self) -> usize {
        match self {
            KernelBase::Box => 10,
            KernelBase::Epanechnikov => 12,
            KernelBase::Quartic => 14,
        }
    }

    fn suggestion(self) -> &'static str {
        match self {
            KernelBase::Box => "epa",
            KernelBase::Epanechnikov => "quartic",
            KernelBase::Quartic => "a lower order",
        }
    }
}

impl FromStr for KernelBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" | "uniform" => Ok(KernelBase::Box),
            "epa" | "epanechnikov" => Ok(KernelBase::Epanechnikov),
            "quartic" | "biweight" => Ok(KernelBase::Quartic),
            other => Err(Error::UnknownKernel(other.to_string())),
        }
    }
}

/// A univariate polynomial kernel on a closed interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel1d {
    base: KernelBase,
    order: usize,
    lo: f64,
    hi: f64,
    /// Monomial coefficients of `K` on `[lo, hi]`, lowest degree first.
    coeffs: Vec<f64>,
}

impl Kernel1d {
    pub fn base(&self) -> KernelBase {
        self.base
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        horner(&self.coeffs, x)
    }

    /// `int x^k K(x) dx`, integrated exactly term by term.
    pub fn moment(&self, k: usize) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c * monomial_integral(j + k, self.lo, self.hi))
            .sum()
    }

    fn l2_norm_sq(&self) -> f64 {
        let sq = poly_mul(&self.coeffs, &self.coeffs);
        sq.iter().enumerate().map(|(j, c)| c * monomial_integral(j, self.lo, self.hi)).sum()
    }

    fn sup_norm(&self) -> f64 {
        let n = 20_000;
        let step = (self.hi - self.lo) / n as f64;
        let abs = |x: f64| horner(&self.coeffs, x).abs();
        let (mut best_x, mut best) = (self.lo, abs(self.lo));
        for i in 1..=n {
            let x = self.lo + i as f64 * step;
            let v = abs(x);
            if v > best {
                best = v;
                best_x = x;
            }
        }
        // golden-section refinement inside the bracketing cells
        let (mut a, mut b) = ((best_x - step).max(self.lo), (best_x + step).min(self.hi));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if abs(c) > abs(d) {
                b = d;
            } else {
                a = c;
            }
        }
        best.max(abs(0.5 * (a + b)))
    }

    fn l1_norm(&self) -> f64 {
        // split at sign changes so each piece is a polynomial, then integrate exactly
        let n = 20_000;
        let step = (self.hi - self.lo) / n as f64;
        let f = |x: f64| horner(&self.coeffs, x);
        let mut breaks = vec![self.lo];
        for i in 0..n {
            let (a, b) = (self.lo + i as f64 * step, self.lo + (i + 1) as f64 * step);
            if f(a) * f(b) < 0.0 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if f(lo) * f(mid) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                breaks.push(0.5 * (lo + hi));
            }
        }
        breaks.push(self.hi);
        let gl = GaussLegendre::new(16);
        breaks.windows(2).map(|w| gl.integrate(f, w[0], w[1], 1).abs()).sum()
    }
}

/// A tensor-product kernel `K(u) = prod_c K_c(u_c)` with cached norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    factors: Vec<Kernel1d>,
    order: usize,
    l2_norm_sq: f64,
    sup_norm: f64,
    l1_norm: f64,
}

impl KernelSpec {
    fn from_factors(factors: Vec<Kernel1d>) -> Self {
        let order = factors.iter().map(Kernel1d::order).min().unwrap_or(1);
        let l2_norm_sq = factors.iter().map(Kernel1d::l2_norm_sq).product();
        let sup_norm = factors.iter().map(Kernel1d::sup_norm).product();
        let l1_norm = factors.iter().map(Kernel1d::l1_norm).product();
        Self { factors, order, l2_norm_sq, sup_norm, l1_norm }
    }

    /// Kernel on `R^dim` from a registry id such as `"epa:2"`: the product
    /// of `dim` identical one-dimensional factors.
    pub fn from_id(id: &str, dim: usize) -> Result<Self> {
        let (base, order) = id.split_once(':').ok_or_else(|| Error::UnknownKernel(id.to_string()))?;
        let base: KernelBase = base.trim().parse()?;
        let order: usize = order.trim().parse().map_err(|_| Error::UnknownKernel(id.to_string()))?;
        let k = make_kernel_1d(order, base)?;
        Ok(k.isotropic(dim))
    }

    /// Registry id of the first factor, e.g. `"epa:2"`.
    pub fn id(&self) -> String {
        let f = &self.factors[0];
        format!("{}:{}", f.base.id(), f.order)
    }

    /// Product of `dim` copies of this (one-dimensional) kernel.
    pub fn isotropic(&self, dim: usize) -> Self {
        let f = self.factors[0].clone();
        Self::from_factors(vec![f; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn factors(&self) -> &[Kernel1d] {
        &self.factors
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.l2_norm_sq
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1_norm
    }

    /// `K(u)`.
    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        let mut v = 1.0;
        for (f, x) in self.factors.iter().zip(u) {
            v *= f.eval(*x);
            if v == 0.0 {
                return 0.0;
            }
        }
        v
    }

    /// Splits `H x K` into the leading factor `H` and the remaining `K`.
    pub fn split_first(&self) -> Result<(KernelSpec, KernelSpec)> {
        if self.dim() < 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: self.dim() });
        }
        Ok((Self::from_factors(vec![self.factors[0].clone()]), Self::from_factors(self.factors[1..].to_vec())))
    }

    /// Radius `r` such that `K(u) = 0` whenever `max_c |u_c| > r`.
    pub fn support_radius(&self) -> f64 {
        self.factors.iter().map(|f| f.lo.abs().max(f.hi.abs())).fold(0.0, f64::max)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.factors.iter().map(|k| format!("{}:{}", k.base.id(), k.order)).collect::<Vec<_>>().join("x"))
    }
}

/// Builds a one-dimensional kernel of the requested order on `base`.
pub fn make_kernel_1d(order: usize, base: KernelBase) -> Result<KernelSpec> {
    if order == 0 {
        return Err(Error::InvalidParameter("kernel order must be >= 1".into()));
    }
    let infeasible = || Error::InfeasibleOrder { order, base: base.id(), suggestion: base.suggestion() };
    if order > base.max_order() {
        return Err(infeasible());
    }
    let (lo, hi) = base.support();
    let b = base.coefficients();
    let base_moment = |k: usize| -> f64 {
        b.iter().enumerate().map(|(j, c)| c * monomial_integral(j + k, lo, hi)).sum()
    };
    let m = (order - 1) / 2;
    let size = m + 1;
    let hankel = DMatrix::from_fn(size, size, |i, j| base_moment(2 * i + 2 * j));
    let mut rhs = DVector::zeros(size);
    rhs[0] = 1.0;
    let even = hankel.lu().solve(&rhs).ok_or_else(infeasible)?;
    let mut p = vec![0.0; 2 * m + 1];
    for (j, a) in even.iter().enumerate() {
        p[2 * j] = *a;
    }
    let kernel = Kernel1d { base, order, lo, hi, coeffs: poly_mul(&p, &b) };
    let mass_err = (kernel.moment(0) - 1.0).abs();
    let moment_err = (1..order).map(|k| kernel.moment(k).abs()).fold(0.0, f64::max);
    if mass_err > 1e-11 || moment_err > 1e-11 {
        return Err(infeasible());
    }
    Ok(KernelSpec::from_factors(vec![kernel]))
}

/// `h^{-dim} K(u / h)`.
pub fn eval_scaled(kernel: &KernelSpec, h: f64, u: &[f64]) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be > 0, got {h}")));
    }
    if u.len() != kernel.dim() {
        return Err(Error::DimensionMismatch { expected: kernel.dim(), got: u.len() });
    }
    Ok(scaled_unchecked(kernel, h, u))
}

#[inline]
pub(crate) fn scaled_unchecked(kernel: &KernelSpec, h: f64, u: &[f64]) -> f64 {
    let mut v = 1.0;
    for (f, x) in kernel.factors.iter().zip(u) {
        v *= f.eval(x / h) / h;
        if v == 0.0 {
            return 0.0;
        }
    }
    v
}

/// `(H x K)(t, x) = H(t) K(x)` on `R^{1 + d}`.
pub fn product_kernel(time: &KernelSpec, space: &KernelSpec) -> Result<KernelSpec> {
    if time.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: time.dim() });
    }
    let mut factors = time.factors.clone();
    factors.extend(space.factors.iter().cloned());
    Ok(KernelSpec::from_factors(factors))
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn monomial_integral(k: usize, lo: f64, hi: f64) -> f64 {
    let e = k as i32 + 1;
    (hi.powi(e) - lo.powi(e)) / e as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box() {
        let k = make_kernel_1d(1, KernelBase::Box).unwrap();
        assert_eq!(k.eval(&[0.2]), 1.0);
        assert_eq!(k.eval(&[0.7]), 0.0);
        assert!((k.l2_norm_sq() - 1.0).abs() < 1e-15);
        assert!((k.sup_norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn epanechnikov_order_two_is_the_base() {
        let k = make_kernel_1d(2, KernelBase::Epanechnikov).unwrap();
        for &x in &[-0.9, -0.2, 0.0, 0.5] {
            assert!((k.eval(&[x]) - 0.75 * (1.0 - x * x)).abs() < 1e-15);
        }
        assert!((k.factors()[0].moment(0) - 1.0).abs() < 1e-10);
        assert!((k.l2_norm_sq() - 0.6).abs() < 1e-14);
    }

    #[test]
    fn scaling_identity_and_support() {
        let k = make_kernel_1d(1, KernelBase::Box).unwrap();
        assert_eq!(eval_scaled(&k, 0.5, &[0.0]).unwrap(), 2.0);
        assert_eq!(eval_scaled(&k, 0.5, &[0.3]).unwrap(), 0.0);
        assert!(eval_scaled(&k, 0.0, &[0.0]).is_err());
        assert!(eval_scaled(&k, -1.0, &[0.0]).is_err());
    }

    #[test]
    fn epanechnikov_scaled_reference() {
        let k = make_kernel_1d(2, KernelBase::Epanechnikov).unwrap();
        let (h, u) = (0.3, 0.1);
        let reference = 0.75 * (1.0 - (u / h) * (u / h)) / h;
        assert!((eval_scaled(&k, h, &[u]).unwrap() - reference).abs() < 1e-14);
    }

    #[test]
    fn orders_beyond_cap_are_infeasible() {
        let err = make_kernel_1d(11, KernelBase::Box).unwrap_err();
        assert!(matches!(err, Error::InfeasibleOrder { suggestion: "epa", .. }), "{err}");
        assert!(make_kernel_1d(0, KernelBase::Box).is_err());
    }

    #[test]
    fn registry_ids() {
        let k = KernelSpec::from_id("quartic:4", 2).unwrap();
        assert_eq!(k.dim(), 2);
        assert_eq!(k.order(), 4);
        assert_eq!(k.id(), "quartic:4");
        assert!(KernelSpec::from_id("gauss:2", 1).is_err());
        assert!(KernelSpec::from_id("epa", 1).is_err());
    }

    #[test]
    fn product_norms_multiply() {
        let h = make_kernel_1d(2, KernelBase::Epanechnikov).unwrap();
        let k = KernelSpec::from_id("epa:2", 1).unwrap();
        let hk = product_kernel(&h, &k).unwrap();
        assert!((hk.l2_norm_sq() - 0.36).abs() < 1e-14);
        assert!((hk.sup_norm() - 0.5625).abs() < 1e-12);
        assert!(product_kernel(&hk, &k).is_err());
    }
}
