use mckean::kernels::{eval_scaled, make_kernel_1d, product_kernel, KernelBase, KernelSpec};

const BASES: [KernelBase; 3] = [KernelBase::Box, KernelBase::Epanechnikov, KernelBase::Quartic];

/// Composite Simpson rule, independent of the crate's Gauss-Legendre code.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn moments(k: &KernelSpec, upto: usize) -> Vec<f64> {
    let f = &k.factors()[0];
    let (lo, hi) = f.support();
    (0..upto).map(|p| simpson(|x| x.powi(p as i32) * f.eval(x), lo, hi, 4000)).collect()
}

#[test]
fn moment_audit_all_feasible_orders() {
    for base in BASES {
        for order in 1..=base.max_order() {
            let k = make_kernel_1d(order, base).unwrap();
            let m = moments(&k, order);
            assert!((m[0] - 1.0).abs() < 1e-10, "{base:?} order {order}: mass {}", m[0]);
            for (p, v) in m.iter().enumerate().skip(1) {
                assert!(v.abs() < 1e-10, "{base:?} order {order}: moment {p} = {v:e}");
            }
        }
    }
}

#[test]
fn quartic_order_four_moments() {
    let k = make_kernel_1d(4, KernelBase::Quartic).unwrap();
    let m = moments(&k, 4);
    assert!(m[1].abs() < 1e-10 && m[2].abs() < 1e-10 && m[3].abs() < 1e-10, "{m:?}");
    // order 4 is genuinely higher order: the fourth moment does not vanish
    assert!(moments(&k, 5)[4].abs() > 1e-3);
}

#[test]
fn infeasible_orders_suggest_another_base() {
    for base in BASES {
        let err = make_kernel_1d(base.max_order() + 1, base).unwrap_err().to_string();
        assert!(err.contains("infeasible") && err.contains("try"), "{err}");
    }
}

#[test]
fn scaled_kernels_integrate_to_one() {
    for id in ["box:1", "epa:2", "quartic:4", "epa:6"] {
        let k = KernelSpec::from_id(id, 1).unwrap();
        for h in [0.05, 0.3, 1.0, 2.7] {
            let r = h * k.support_radius();
            let mass = simpson(|u| eval_scaled(&k, h, &[u]).unwrap(), -r, r, 4000);
            assert!((mass - 1.0).abs() < 1e-8, "{id} h={h}: {mass}");
        }
    }
}

#[test]
fn cached_norms_match_direct_computation() {
    for base in BASES {
        for order in [1, 2, 4, 6] {
            let k = make_kernel_1d(order, base).unwrap();
            let f = &k.factors()[0];
            let (lo, hi) = f.support();
            let l2 = simpson(|x| f.eval(x).powi(2), lo, hi, 4000);
            assert!((l2 - k.l2_norm_sq()).abs() < 1e-8, "{base:?} {order}: {l2} vs {}", k.l2_norm_sq());
            let scan = (0..=200_000).map(|i| f.eval(lo + (hi - lo) * i as f64 / 200_000.0).abs()).fold(0.0, f64::max);
            assert!((scan - k.sup_norm()).abs() < 1e-8, "{base:?} {order}: {scan} vs {}", k.sup_norm());
            let l1 = simpson(|x| f.eval(x).abs(), lo, hi, 20_000);
            assert!((l1 - k.l1_norm()).abs() < 1e-6, "{base:?} {order}: {l1} vs {}", k.l1_norm());
        }
    }
}

#[test]
fn product_kernel_norms_and_order() {
    let bx = make_kernel_1d(1, KernelBase::Box).unwrap();
    let bb = product_kernel(&bx, &bx).unwrap();
    assert_eq!(bb.dim(), 2);
    assert!((bb.l2_norm_sq() - 1.0).abs() < 1e-15);
    assert_eq!(bb.eval(&[0.1, -0.2]), 1.0);

    let epa = make_kernel_1d(2, KernelBase::Epanechnikov).unwrap();
    let ee = product_kernel(&epa, &epa).unwrap();
    // two-dimensional quadrature of K^2 as an iterated Simpson rule
    let l2 = simpson(|t| simpson(|x| ee.eval(&[t, x]).powi(2), -1.0, 1.0, 400), -1.0, 1.0, 400);
    assert!((l2 - 0.36).abs() < 1e-10, "{l2}");
    assert!((ee.l2_norm_sq() - 0.36).abs() < 1e-14);

    let q4 = make_kernel_1d(4, KernelBase::Quartic).unwrap();
    let mixed = product_kernel(&epa, &q4).unwrap();
    assert_eq!(mixed.order(), 2);
    // the time direction has a nonzero second moment, the space direction does not
    let m2_t = simpson(|t| t * t * simpson(|x| mixed.eval(&[t, x]), -1.0, 1.0, 200), -1.0, 1.0, 200);
    let m2_x = simpson(|t| simpson(|x| x * x * mixed.eval(&[t, x]), -1.0, 1.0, 2000), -1.0, 1.0, 200);
    assert!(m2_t.abs() > 0.1 && m2_x.abs() < 1e-10, "{m2_t} {m2_x}");
}
