use mckean::diagnostics::{fit_tail_envelope, rate_slope, w1_exact_1d, w1_sliced, w1_to_cdf};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Optimal transport between two uniform empirical measures of equal size.
/// By Birkhoff's theorem the transport LP attains its optimum at a
/// permutation, so exhaustive enumeration gives the LP value.
fn lp_oracle(a: &[f64], b: &[f64]) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, a: &[f64], b: &[f64], best: &mut f64) {
        if k == perm.len() {
            let cost: f64 = perm.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum();
            *best = best.min(cost);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, a, b, best);
            perm.swap(k, i);
        }
    }
    let mut perm: Vec<usize> = (0..a.len()).collect();
    let mut best = f64::INFINITY;
    permute(0, &mut perm, a, b, &mut best);
    best / a.len() as f64
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn four_point_example_matches_lp() {
    let a = [0.0, 1.0, 2.0, 3.0];
    let b = [0.5, 1.5, 2.5, 3.5];
    assert_eq!(w1_exact_1d(&a, &b).unwrap(), 0.5);
    assert!((lp_oracle(&a, &b) - 0.5).abs() < 1e-15);
}

proptest! {
    #[test]
    fn equals_lp_on_small_instances(pairs in (1usize..=8).prop_flat_map(|n| (
        prop::collection::vec(-5.0f64..5.0, n),
        prop::collection::vec(-5.0f64..5.0, n),
    ))) {
        let (a, b) = (sorted(pairs.0), sorted(pairs.1));
        let w = w1_exact_1d(&a, &b).unwrap();
        let lp = lp_oracle(&a, &b);
        prop_assert!((w - lp).abs() <= 1e-12 * (1.0 + lp), "{} vs {}", w, lp);
    }

    #[test]
    fn metric_axioms(n in 1usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || sorted((0..n).map(|_| rng.random_range(-3.0..3.0)).collect());
        let (a, b, c) = (draw(), draw(), draw());
        let ab = w1_exact_1d(&a, &b).unwrap();
        prop_assert_eq!(ab, w1_exact_1d(&b, &a).unwrap());
        let ac = w1_exact_1d(&a, &c).unwrap();
        let cb = w1_exact_1d(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }
}

#[test]
fn unequal_sizes_match_duplication() {
    // a sample of size 2 equals the same sample with every atom repeated 3 times
    let a = [0.0, 2.0];
    let b = [0.1, 0.4, 1.9];
    let a6 = [0.0, 0.0, 0.0, 2.0, 2.0, 2.0];
    let b6 = [0.1, 0.1, 0.4, 0.4, 1.9, 1.9];
    let direct = w1_exact_1d(&a, &b).unwrap();
    assert!((direct - w1_exact_1d(&a6, &b6).unwrap()).abs() < 1e-15);
}

#[test]
fn sample_against_gaussian_cdf() {
    let cdf = |x: f64| 0.5 * libm_erfc(-x / std::f64::consts::SQRT_2);
    let a = sorted((0..9).map(|i| (i as f64 - 4.0) * 0.5).collect());
    let via_cdf = w1_to_cdf(&a, cdf).unwrap();
    // independent oracle: quantile integral with a fine midpoint rule
    let n = 400_000;
    let q = |u: f64| {
        let (mut lo, mut hi) = (-12.0, 12.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let oracle: f64 = (0..n)
        .map(|k| {
            let u = (k as f64 + 0.5) / n as f64;
            (a[((u * 9.0) as usize).min(8)] - q(u)).abs()
        })
        .sum::<f64>()
        / n as f64;
    assert!((via_cdf - oracle).abs() < 1e-4, "{via_cdf} vs {oracle}");
}

/// Complementary error function (Numerical Recipes erfcc, relative error < 1.2e-7).
fn libm_erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[test]
fn sliced_translation_and_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
    assert_eq!(w1_sliced(&a, &a, 100, 1).unwrap(), 0.0);
    let v = [0.6, -0.8];
    let b: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + v[0], p[1] + v[1]]).collect();
    let w = w1_sliced(&a, &b, 10_000, 3).unwrap();
    let want = 2.0 / std::f64::consts::PI * 1.0;
    assert!((w - want).abs() < 0.02, "{w} vs {want}");

    let c: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.sample::<f64, _>(StandardNormal) + 1.0, rng.sample(StandardNormal)]).collect();
    let rot = |p: &Vec<f64>| {
        let (s, co) = 0.7f64.sin_cos();
        vec![co * p[0] - s * p[1], s * p[0] + co * p[1]]
    };
    let w1 = w1_sliced(&a, &c, 10_000, 5).unwrap();
    let w2 = w1_sliced(&a.iter().map(rot).collect::<Vec<_>>(), &c.iter().map(rot).collect::<Vec<_>>(), 10_000, 5).unwrap();
    assert!((w1 - w2).abs() < 0.03 * w1, "{w1} vs {w2}");
    // deterministic given the seed
    assert_eq!(w1, w1_sliced(&a, &c, 10_000, 5).unwrap());
}

#[test]
fn gaussian_tail_fit() {
    let (n, v, m) = (1000usize, 0.25, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let devs: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal) * (v / n as f64).sqrt()).collect();
    let env = fit_tail_envelope(&devs, v, m, n).unwrap();
    assert!(!env.degenerate);
    assert!(env.kappa2 >= 0.25 && env.kappa2 <= 1.0, "kappa2 = {}", env.kappa2);
    assert!(env.valid);

    // rescaling deviations by c, v by c^2 and m by c leaves z, hence the flag, unchanged
    let c = 3.0;
    let scaled: Vec<f64> = devs.iter().map(|d| d * c).collect();
    let env2 = fit_tail_envelope(&scaled, v * c * c, m * c, n).unwrap();
    assert_eq!(env.valid, env2.valid);
    assert!((env.kappa2 - env2.kappa2).abs() < 1e-9);
}

#[test]
fn rate_slope_matches_normal_equations() {
    let ns = [512.0, 1024.0, 2048.0, 4096.0, 8192.0];
    let errs = [0.081, 0.06, 0.047, 0.035, 0.027];
    let fit = rate_slope(&ns, &errs).unwrap();
    let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { f64::ln(ns[i]) });
    let y = DVector::from_iterator(5, errs.iter().map(|e| e.ln()));
    let beta = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y;
    assert!((fit.slope - beta[1]).abs() < 1e-12);
    assert!((fit.intercept - beta[0]).abs() < 1e-10);
    assert!(fit.stderr > 0.0);
}
