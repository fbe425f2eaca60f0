//! Goldenshluger-Lepski selection over finite, partially ordered bandwidth
//! grids.
//!
//! For every grid entry `h`,
//! `A(h) = max_{h' <= h} { |est(h) - est(h')|^2 - (V(h) + V(h')) }_+`
//! and the selected entry minimises `A(h) + V(h)`. The order is
//! componentwise, so on a two-parameter grid some entries are incomparable.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How grid entries are spaced inside the admissible box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridRule {
    /// Entries `e^{-k}`, `k >= 1`.
    Exponential,
    /// Entries `r^{-k}`, `k >= 1`, for a ratio `r > 1`.
    Geometric(f64),
}

impl GridRule {
    pub fn ratio(self) -> f64 {
        match self {
            GridRule::Exponential => std::f64::consts::E,
            GridRule::Geometric(r) => r,
        }
    }

    /// All `r^{-k}`, `k >= 1`, inside `[lo, hi]`, largest first.
    fn ladder(self, lo: f64, hi: f64) -> Vec<f64> {
        let r = self.ratio();
        let mut out = Vec::new();
        let mut k = 1;
        loop {
            let h = r.powi(-k);
            if h < lo * (1.0 - 1e-12) {
                break;
            }
            if h <= hi * (1.0 + 1e-12) {
                out.push(h);
            }
            k += 1;
        }
        out
    }
}

impl fmt::Display for GridRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridRule::Exponential => write!(f, "geometric"),
            GridRule::Geometric(r) => write!(f, "geometric:{r}"),
        }
    }
}

impl FromStr for GridRule {
    type Err = Error;

    /// `"geometric"` is the `e^{-k}` ladder, `"geometric:<r>"` uses ratio `r`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().split_once(':') {
            None if s.trim() == "geometric" => Ok(GridRule::Exponential),
            Some(("geometric", r)) => {
                let r: f64 = r.trim().parse().map_err(|_| Error::InvalidParameter(format!("bad grid ratio in {s:?}")))?;
                if !(r > 1.0 && r.is_finite()) {
                    return Err(Error::InvalidParameter(format!("grid ratio must be > 1, got {r}")));
                }
                Ok(GridRule::Geometric(r))
            }
            _ => Err(Error::InvalidParameter(format!("unknown grid rule {s:?}"))),
        }
    }
}

/// Admissible density bandwidths `[N^{-1/d} (log N)^{2/d}, 1]`.
pub fn density_box(n: usize, d: usize) -> (f64, f64) {
    let (n, d) = (n as f64, d as f64);
    ((n.ln().powi(2) / n).powf(1.0 / d), 1.0)
}

/// Admissible drift bandwidths: `h1` in
/// `[N^{-1/(d+1)} (log N)^{2/(d+1)}, (log N)^{-2}]`, `h2` in
/// `[N^{-1/(d+1)} (log N)^{2/(d+1)}, 1]`. With `relax_h1` the upper bound
/// on `h1` is lifted to 1; at moderate `N` the strict box is empty.
pub fn drift_box(n: usize, d: usize, relax_h1: bool) -> [(f64, f64); 2] {
    let (nf, df) = (n as f64, d as f64);
    let lo = (nf.ln().powi(2) / nf).powf(1.0 / (df + 1.0));
    let h1_hi = if relax_h1 { 1.0 } else { nf.ln().powi(-2) };
    [(lo, h1_hi), (lo, 1.0)]
}

/// A finite set of bandwidth tuples (length 1 or 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    dims: usize,
    entries: Vec<Vec<f64>>,
}

impl BandwidthGrid {
    pub fn new(dims: usize, entries: Vec<Vec<f64>>) -> Result<Self> {
        if !(dims == 1 || dims == 2) {
            return Err(Error::InvalidParameter(format!("grid dims must be 1 or 2, got {dims}")));
        }
        if entries.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for e in &entries {
            if e.len() != dims {
                return Err(Error::DimensionMismatch { expected: dims, got: e.len() });
            }
            if !e.iter().all(|h| *h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!("bandwidths must be finite and > 0, got {e:?}")));
            }
        }
        Ok(Self { dims, entries })
    }

    pub fn one_dim(hs: &[f64]) -> Result<Self> {
        Self::new(1, hs.iter().map(|h| vec![*h]).collect())
    }

    /// Cartesian product `h1s x h2s`.
    pub fn product(h1s: &[f64], h2s: &[f64]) -> Result<Self> {
        let entries = h1s.iter().flat_map(|a| h2s.iter().map(move |b| vec![*a, *b])).collect();
        Self::new(2, entries)
    }

    /// Density grid: the rule's ladder inside [`density_box`].
    pub fn density(n: usize, d: usize, rule: GridRule) -> Result<Self> {
        let (lo, hi) = density_box(n, d);
        let hs = rule.ladder(lo, hi);
        if hs.is_empty() {
            return Err(Error::InadmissibleGrid(format!("no {rule} bandwidth fits in [{lo:.4}, {hi}] for N={n}, d={d}")));
        }
        Self::one_dim(&hs)
    }

    /// Drift grid: product of the rule's ladders inside [`drift_box`], with
    /// `h1` additionally capped by `h1_cap` (for instance to keep the time
    /// kernel inside `[0, T]`).
    pub fn drift(n: usize, d: usize, rule: GridRule, relax_h1: bool, h1_cap: f64) -> Result<Self> {
        let [(lo1, hi1), (lo2, hi2)] = drift_box(n, d, relax_h1);
        let h1s = rule.ladder(lo1, hi1.min(h1_cap));
        let h2s = rule.ladder(lo2, hi2);
        if h1s.is_empty() || h2s.is_empty() {
            return Err(Error::InadmissibleGrid(format!(
                "no {rule} bandwidth pair fits in [{lo1:.4}, {:.4}] x [{lo2:.4}, {hi2}] for N={n}, d={d}{}",
                hi1.min(h1_cap),
                if relax_h1 { "" } else { " (h1 <= (log N)^-2 is binding; relax_h1 lifts it)" }
            )));
        }
        Self::product(&h1s, &h2s)
    }

    /// Checks the entries against the admissible box and `Card <= N`.
    pub fn check_admissible(&self, n: usize, d: usize, relax_h1: bool) -> Result<()> {
        if self.entries.len() > n {
            return Err(Error::InadmissibleGrid(format!("{} entries exceed N={n}", self.entries.len())));
        }
        let bounds: Vec<(f64, f64)> = match self.dims {
            1 => vec![density_box(n, d)],
            _ => drift_box(n, d, relax_h1).to_vec(),
        };
        for e in &self.entries {
            for (h, (lo, hi)) in e.iter().zip(&bounds) {
                if *h < lo * (1.0 - 1e-9) || *h > hi * (1.0 + 1e-9) {
                    return Err(Error::InadmissibleGrid(format!(
                        "entry {e:?} leaves [{lo:.4}, {hi:.4}] for N={n}, d={d}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry with the largest first component (then second).
    pub fn largest(&self) -> &[f64] {
        self.entries.iter().max_by(|a, b| lex(a, b)).expect("grid is nonempty")
    }

    /// Componentwise `entries[i] <= entries[j]`.
    pub fn le(&self, i: usize, j: usize) -> bool {
        self.entries[i].iter().zip(&self.entries[j]).all(|(a, b)| a <= b)
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlDiagnostics {
    pub bandwidths: Vec<Vec<f64>>,
    pub estimates: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    pub chosen: usize,
}

impl GlDiagnostics {
    pub fn chosen_bandwidth(&self) -> &[f64] {
        &self.bandwidths[self.chosen]
    }

    pub fn chosen_estimate(&self) -> &[f64] {
        &self.estimates[self.chosen]
    }
}

/// GL selection. `estimates[j]` is the (scalar or vector) estimate at
/// `grid.entries()[j]` and `variance[j]` its majorant.
pub fn gl_select(grid: &BandwidthGrid, estimates: &[Vec<f64>], variance: &[f64]) -> Result<GlDiagnostics> {
    let n = grid.len();
    if n == 0 {
        return Err(Error::EmptyGrid);
    }
    if estimates.len() != n || variance.len() != n {
        return Err(Error::GridMismatch(format!(
            "{n} grid entries, {} estimates, {} variances",
            estimates.len(),
            variance.len()
        )));
    }
    if !variance.iter().all(|v| *v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter("variance terms must be finite and > 0".into()));
    }
    let width = estimates[0].len();
    if estimates.iter().any(|e| e.len() != width) {
        return Err(Error::GridMismatch("estimates have differing lengths".into()));
    }
    if !estimates.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("GL estimate"));
    }

    let a: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| grid.le(j, i))
                .map(|j| {
                    let dist: f64 = estimates[i].iter().zip(&estimates[j]).map(|(x, y)| (x - y) * (x - y)).sum();
                    (dist - (variance[i] + variance[j])).max(0.0)
                })
                .fold(0.0, f64::max)
        })
        .collect();

    let mut chosen = 0;
    for i in 1..n {
        let (ci, cb) = (a[i] + variance[i], a[chosen] + variance[chosen]);
        if ci < cb || (ci == cb && lex(&grid.entries[i], &grid.entries[chosen]) == Ordering::Less) {
            chosen = i;
        }
    }
    Ok(GlDiagnostics {
        bandwidths: grid.entries.clone(),
        estimates: estimates.to_vec(),
        a,
        v: variance.to_vec(),
        chosen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn single_entry() {
        let g = BandwidthGrid::one_dim(&[0.3]).unwrap();
        let d = gl_select(&g, &scalars(&[1.7]), &[0.2]).unwrap();
        assert_eq!(d.chosen, 0);
        assert_eq!(d.a, vec![0.0]);
    }

    #[test]
    fn equal_estimates_pick_largest_bandwidth() {
        let g = BandwidthGrid::one_dim(&[0.1, 0.2, 0.4]).unwrap();
        let d = gl_select(&g, &scalars(&[1.0, 1.0, 1.0]), &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(d.a, vec![0.0; 3]);
        assert_eq!(d.chosen, 2);
    }

    #[test]
    fn three_entry_hand_example() {
        // entries ordered by h; est = (0, 0.5, 2), V = (1, 0.4, 0.1)
        let g = BandwidthGrid::one_dim(&[0.1, 0.2, 0.3]).unwrap();
        let d = gl_select(&g, &scalars(&[0.0, 0.5, 2.0]), &[1.0, 0.4, 0.1]).unwrap();
        // A(0.3) = max{(2-0)^2 - 1.1, (2-0.5)^2 - 0.5, 0} = 2.9
        assert!((d.a[2] - 2.9).abs() < 1e-15);
        assert_eq!(d.a[1], 0.0);
        assert_eq!(d.chosen, 1);
    }

    #[test]
    fn ties_go_to_smallest_tuple() {
        let g = BandwidthGrid::product(&[0.2, 0.1], &[0.5]).unwrap();
        let d = gl_select(&g, &scalars(&[0.0, 0.0]), &[1.0, 1.0]).unwrap();
        assert_eq!(d.chosen_bandwidth(), &[0.1, 0.5]);
    }

    #[test]
    fn grid_rules_and_boxes() {
        assert_eq!("geometric".parse::<GridRule>().unwrap(), GridRule::Exponential);
        assert_eq!("geometric:1.5".parse::<GridRule>().unwrap(), GridRule::Geometric(1.5));
        assert!("geometric:0.5".parse::<GridRule>().is_err());
        let g = BandwidthGrid::density(4096, 1, GridRule::Exponential).unwrap();
        // k <= log N - 2 log log N = 4.08
        assert_eq!(g.len(), 4);
        g.check_admissible(4096, 1, false).unwrap();
        assert!(BandwidthGrid::drift(4096, 1, GridRule::Exponential, false, 1.0).is_err());
        let g2 = BandwidthGrid::drift(4096, 1, GridRule::Geometric(1.3), true, 0.5).unwrap();
        g2.check_admissible(4096, 1, true).unwrap();
        assert!(g2.check_admissible(4096, 1, false).is_err());
    }

    #[test]
    fn mismatch_and_empty() {
        let g = BandwidthGrid::one_dim(&[0.1, 0.2]).unwrap();
        assert!(gl_select(&g, &scalars(&[1.0]), &[1.0, 1.0]).is_err());
        assert!(BandwidthGrid::one_dim(&[]).is_err());
    }
}
