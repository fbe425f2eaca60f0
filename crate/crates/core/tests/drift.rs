use std::sync::Arc;

use mckean::diagnostics::rate_slope;
use mckean::drift::{drift_gl, pi_hat_at, quotient, DriftWeights};
use mckean::gl::{BandwidthGrid, GridRule};
use mckean::kernels::{product_kernel, KernelSpec};
use mckean::model::{DiffusionModel, DriftModel, InitialLaw, MeanFieldOu, TimeGrid, VectorField};
use mckean::rng::replicate_seed;
use mckean::simulator::{simulate_ensemble, SimConfig};
use proptest::prelude::*;

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn epa(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

fn zero() -> VectorField {
    Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[test]
fn pi_hat_within_monte_carlo_band_of_smoothed_oracle() {
    let p = MeanFieldOu::new(1.0, 1.0, 0.5, 1.0, 0.5).unwrap();
    let (t0, n, reps) = (1.0, 8192, 16);
    let (m_t, _) = p.moments(t0).unwrap();
    let x0 = m_t;
    let (h1, h2) = (0.2, 0.2);
    // E pi_hat = int int H_h1(t0 - t) K_h2(x0 - x) b(t, x) mu_t(x) dx dt
    let oracle = simpson(
        |s| {
            let t = t0 - h1 * s;
            epa(s) * simpson(|u| epa(u) * { let x = x0 - h2 * u; p.drift_at(t, x).unwrap() * p.density_at(t, x).unwrap() }, -1.0, 1.0, 100)
        },
        -1.0,
        1.0,
        100,
    );
    let hk = product_kernel(&KernelSpec::from_id("epa:2", 1).unwrap(), &KernelSpec::from_id("epa:2", 1).unwrap()).unwrap();
    let vals: Vec<f64> = (0..reps)
        .map(|r| {
            let cfg = SimConfig::new(n, TimeGrid::new(2.0, 1000).unwrap(), replicate_seed(5, n as u64, r as u64));
            let ens = simulate_ensemble(&p.drift_model(), &p.diffusion(), &p.initial_law(), &cfg).unwrap();
            pi_hat_at(&ens, t0, &[x0], h1, h2, &hk).unwrap()[0]
        })
        .collect();
    let (m, sd) = mean_sd(&vals);
    // Euler and Riemann discretization at dt = 2e-3 contribute well under 0.005
    let band = 4.0 * sd / (reps as f64).sqrt() + 0.005;
    assert!((m - oracle).abs() < band, "mean {m} oracle {oracle} band {band}");
}

#[test]
fn gl_drift_median_error() {
    let p = MeanFieldOu::new(1.0, 1.0, 0.5, 1.0, 0.5).unwrap();
    let (t0, x0, n, reps) = (1.0, 0.0, 8192, 20);
    let truth = p.drift_at(t0, x0).unwrap();
    let k = KernelSpec::from_id("epa:2", 1).unwrap();
    let rule = GridRule::Geometric(1.5);
    let grid2 = BandwidthGrid::drift(n, 1, rule, true, 1.0).unwrap();
    let grid1 = BandwidthGrid::density(n, 1, rule).unwrap();
    // with unit weights the log N factor in the majorants makes GL pick the
    // largest bandwidths at this N; these weights come from a pilot sweep
    let weights = DriftWeights { varpi1: 0.2, varpi2: 0.2, varpi3: None };
    let mut errs: Vec<f64> = (0..reps)
        .map(|r| {
            let cfg = SimConfig::new(n, TimeGrid::new(2.0, 400).unwrap(), replicate_seed(6, n as u64, r as u64));
            let ens = simulate_ensemble(&p.drift_model(), &p.diffusion(), &p.initial_law(), &cfg).unwrap();
            let rep = drift_gl(&ens, t0, &[x0], &grid2, &grid1, &k, &k, weights).unwrap();
            (rep.b_hat[0] - truth).abs()
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    let median = 0.5 * (errs[reps / 2 - 1] + errs[reps / 2]);
    assert!(median <= 0.15 * truth.abs() + 0.1, "median {median}, truth {truth}");
}

#[test]
fn untouched_coordinate_has_zero_pi() {
    // drift pulls only the first coordinate; without noise the second never moves
    let grad_v: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| {
        out[0] = x[0] - 0.5;
        out[1] = 0.0;
    });
    let model = DriftModel::vlasov(2, grad_v, zero(), 0.0).unwrap();
    let cfg = SimConfig::new(500, TimeGrid::new(1.0, 200).unwrap(), 2);
    let init = InitialLaw::gaussian(vec![0.0, 0.0], vec![0.3, 0.3]).unwrap();
    let ens = simulate_ensemble(&model, &DiffusionModel::constant(0.0).unwrap(), &init, &cfg).unwrap();
    let hk = product_kernel(&KernelSpec::from_id("epa:2", 1).unwrap(), &KernelSpec::from_id("epa:2", 2).unwrap()).unwrap();
    let pi = pi_hat_at(&ens, 0.5, &[0.1, 0.0], 0.3, 0.5, &hk).unwrap();
    assert!(pi[0] > 0.01, "{pi:?}");
    assert_eq!(pi[1], 0.0);
}

#[test]
fn halving_dt_barely_moves_pi_hat() {
    // zero noise makes the two runs share their initial draws, so only the
    // time discretization differs
    let p = MeanFieldOu::new(1.0, 1.0, 0.0, 1.0, 0.5).unwrap();
    let hk = product_kernel(&KernelSpec::from_id("epa:2", 1).unwrap(), &KernelSpec::from_id("epa:2", 1).unwrap()).unwrap();
    let run = |steps| {
        let cfg = SimConfig::new(4000, TimeGrid::new(2.0, steps).unwrap(), 77);
        let ens = simulate_ensemble(&p.drift_model(), &p.diffusion(), &p.initial_law(), &cfg).unwrap();
        pi_hat_at(&ens, 1.0, &[0.3], 0.2, 0.2, &hk).unwrap()[0]
    };
    let (coarse, fine) = (run(500), run(1000));
    assert!((coarse - fine).abs() < 0.01, "{coarse} vs {fine}");
}

#[test]
fn martingale_term_decays_like_root_n() {
    // b = 0: pi_hat is a pure stochastic integral with variance ~ 1/N
    let model = DriftModel::GeneralLipschitz { dim: 1, drift: Arc::new(|_, _, _, out| out[0] = 0.0), lipschitz: Some(0.0) };
    let diff = DiffusionModel::constant(1.0).unwrap();
    let init = InitialLaw::gaussian(vec![0.0], vec![1.0]).unwrap();
    let hk = product_kernel(&KernelSpec::from_id("epa:2", 1).unwrap(), &KernelSpec::from_id("epa:2", 1).unwrap()).unwrap();
    let ns: Vec<usize> = (9..=14).map(|e| 1usize << e).collect();
    let reps = 30;
    let rms: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let sq: f64 = (0..reps)
                .map(|r| {
                    let cfg = SimConfig::new(n, TimeGrid::new(1.0, 100).unwrap(), replicate_seed(8, n as u64, r as u64));
                    let ens = simulate_ensemble(&model, &diff, &init, &cfg).unwrap();
                    pi_hat_at(&ens, 0.5, &[0.0], 0.3, 0.5, &hk).unwrap()[0].powi(2)
                })
                .sum();
            (sq / reps as f64).sqrt()
        })
        .collect();
    let fit = rate_slope(&ns.iter().map(|&n| n as f64).collect::<Vec<_>>(), &rms).unwrap();
    assert!((fit.slope + 0.5).abs() <= 0.15, "slope {} from {rms:?}", fit.slope);
}

proptest! {
    #[test]
    fn quotient_is_bounded_by_floor(pi in prop::collection::vec(-10.0f64..10.0, 1..4), mu in -1.0f64..5.0, v3 in 0.01f64..2.0) {
        let b = quotient(&pi, mu, v3).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm(&b) <= norm(&pi) / v3 * (1.0 + 1e-15));
    }
}
