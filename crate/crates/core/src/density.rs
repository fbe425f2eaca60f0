//! Pointwise kernel density estimation with GL bandwidth selection.

use serde::{Deserialize, Serialize};

use crate::gl::{gl_select, BandwidthGrid, GlDiagnostics};
use crate::kernels::{scaled_unchecked, KernelSpec};
use crate::model::Cloud;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimateReport {
    pub value: f64,
    pub t0: Option<f64>,
    pub x0: Vec<f64>,
    pub h: f64,
    pub varpi1: f64,
    pub gl: GlDiagnostics,
}

fn check(cloud: &Cloud, x0: &[f64], kernel: &KernelSpec) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if kernel.dim() != cloud.dim() {
        return Err(Error::DimensionMismatch { expected: cloud.dim(), got: kernel.dim() });
    }
    if x0.len() != cloud.dim() {
        return Err(Error::DimensionMismatch { expected: cloud.dim(), got: x0.len() });
    }
    Ok(())
}

/// `N^{-1} sum_i K_h(x0 - x_i)`.
pub fn density_at(cloud: &Cloud, x0: &[f64], h: f64, kernel: &KernelSpec) -> Result<f64> {
    check(cloud, x0, kernel)?;
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be > 0, got {h}")));
    }
    Ok(density_unchecked(cloud, x0, h, kernel))
}

fn density_unchecked(cloud: &Cloud, x0: &[f64], h: f64, kernel: &KernelSpec) -> f64 {
    let d = cloud.dim();
    let mut u = vec![0.0; d];
    let mut sum = 0.0;
    for p in cloud.points() {
        for ((uc, a), b) in u.iter_mut().zip(x0).zip(p) {
            *uc = a - b;
        }
        sum += scaled_unchecked(kernel, h, &u);
    }
    sum / cloud.len() as f64
}

/// `varpi1 |K|_2^2 log N / (N h^d)`.
pub fn density_variance_term(n: usize, h: f64, kernel: &KernelSpec, varpi1: f64) -> f64 {
    let nf = n as f64;
    varpi1 * kernel.l2_norm_sq() * nf.ln() / (nf * h.powi(kernel.dim() as i32))
}

/// Density estimates on every grid entry followed by GL selection.
pub fn density_gl(
    cloud: &Cloud,
    x0: &[f64],
    grid: &BandwidthGrid,
    kernel: &KernelSpec,
    varpi1: f64,
) -> Result<DensityEstimateReport> {
    check(cloud, x0, kernel)?;
    if grid.dims() != 1 {
        return Err(Error::GridMismatch("density grid must be one-dimensional".into()));
    }
    if !(varpi1 > 0.0) {
        return Err(Error::InvalidParameter(format!("varpi1 must be > 0, got {varpi1}")));
    }
    let n = cloud.len();
    if n < 2 {
        return Err(Error::InvalidParameter("GL needs N >= 2".into()));
    }
    let estimates: Vec<Vec<f64>> =
        grid.entries().iter().map(|h| vec![density_unchecked(cloud, x0, h[0], kernel)]).collect();
    let variance: Vec<f64> = grid.entries().iter().map(|h| density_variance_term(n, h[0], kernel, varpi1)).collect();
    let gl = gl_select(grid, &estimates, &variance)?;
    Ok(DensityEstimateReport {
        value: gl.chosen_estimate()[0],
        t0: None,
        x0: x0.to_vec(),
        h: gl.chosen_bandwidth()[0],
        varpi1,
        gl,
    })
}
