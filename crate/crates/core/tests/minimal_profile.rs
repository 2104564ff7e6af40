use std::f64::consts::SQRT_2;

use approx::assert_relative_eq;
use proptest::prelude::*;
use simons_flow::minimal_profile::*;
use simons_flow::Parameters;

fn base(n: u32) -> ProfileSolution {
    canonical_profile(&Parameters::new(n).unwrap()).unwrap()
}

#[test]
fn solves_to_tolerance_with_the_normalized_tail() {
    for n in [5, 6, 8] {
        let p = base(n);
        assert!(p.ode_residual() < 1e-8, "n={n}: {}", p.ode_residual());
        let target = p.params.asymptote();
        assert!((p.asym_coeff / target - 1.0).abs() < 0.02, "n={n}");
    }
}

#[test]
fn support_function_tail_matches_its_limit() {
    let p = base(5);
    let a = p.params.alpha;
    // (1 - alpha) 2^((alpha+1)/2) for n = 5 is about 2.0947.
    let target = (1.0 - a) * 2f64.powf((a + 1.0) / 2.0);
    assert_relative_eq!(target, 2.0947, epsilon = 1e-4);
    let r = 0.5 * p.r_max();
    assert!((p.support_function(r) / r.powf(a) / target - 1.0).abs() < 0.02);
}

#[test]
fn axis_curvature_from_series() {
    let p = base(5);
    let n = p.params.nf();
    let expected = (n - 1.0) / (n * p.psi0());
    // One-sided second difference of the solved profile at the axis.
    let h = 1e-3;
    let fd = 2.0 * (p.eval(h).0 - p.eval(0.0).0) / (h * h);
    assert_relative_eq!(fd, expected, max_relative = 1e-4);
    assert_relative_eq!(p.eval(0.0).2, expected, max_relative = 1e-8);
}

#[test]
fn grid_invariants() {
    let p = base(5);
    assert_eq!(p.r[0], 0.0);
    assert_eq!(p.dpsi_hat[0], 0.0);
    for j in 0..p.r.len() {
        assert!(p.psi_hat[j] > p.r[j]);
        assert!(p.ddpsi_hat[j] > 0.0);
        assert!(p.support_function(p.r[j]) > 0.0);
    }
    for w in p.r.windows(2) {
        assert!(p.support_function(w[1]) < p.support_function(w[0]));
    }
}

#[test]
fn scale_two_rescales_the_axis_value() {
    let p = base(5);
    let q = scale_profile(&p, 2.0).unwrap();
    let e = 1.0 / (1.0 - p.params.alpha);
    assert_relative_eq!(q.psi0(), 2f64.powf(e) * p.psi0(), max_relative = 1e-14);
    assert_relative_eq!(q.asym_coeff, 2.0 * p.asym_coeff, max_relative = 1e-12);
}

#[test]
fn unit_scale_is_bitwise_identity() {
    let p = base(5);
    let q = scale_profile(&p, 1.0).unwrap();
    assert_eq!(p.psi_hat, q.psi_hat);
    assert_eq!(p.r, q.r);
    assert!(scale_profile(&p, 0.0).is_err());
    assert!(scale_profile(&p, -1.0).is_err());
}

#[test]
fn profiles_increase_with_k() {
    let p = base(5);
    let lo = scale_profile(&p, 1.0).unwrap();
    let hi = scale_profile(&p, 1.5).unwrap();
    for k in 0..=2000 {
        let r = 0.5 * k as f64;
        assert!(lo.eval(r).0 < hi.eval(r).0, "r={r}");
    }
}

#[test]
fn cone_graph_endpoints_and_tail() {
    let p = base(5);
    let c = to_cone_graph(&p).unwrap();
    assert_relative_eq!(c.z0(), p.psi0() / SQRT_2, max_relative = 1e-14);
    assert_relative_eq!(c.dpsi[0], -1.0, epsilon = 1e-8);
    assert!(c.psi.iter().all(|v| *v > 0.0));
    assert!(c.ddpsi.iter().all(|v| *v > 0.0));
    let zt = 0.8 * c.z.last().unwrap();
    let (psi, _, _) = c.eval(zt);
    assert!((psi / zt.powf(p.params.alpha) / c.k - 1.0).abs() < 0.02);
}

#[test]
fn rotation_round_trip() {
    let p = base(5);
    let c = to_cone_graph(&p).unwrap();
    let mut worst: f64 = 0.0;
    for j in 1..c.z.len() - 1 {
        let (z, psi) = (c.z[j], c.psi[j]);
        let x = (z - psi) / SQRT_2;
        let uh = (z + psi) / SQRT_2;
        worst = worst.max((p.eval(x).0 - uh).abs() / uh.max(1.0));
    }
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn derivative_decay_exponents() {
    let p = base(5);
    let a = p.params.alpha;
    let rows = decay_report(&p, 4).unwrap();
    let get = |curve: &str, m: usize| rows.iter().find(|r| r.curve == curve && r.order == m).unwrap();
    for (curve, m) in [("cone", 0), ("cone", 1), ("radial", 2)] {
        let r = get(curve, m);
        assert_relative_eq!(r.expected, a - m as f64);
        assert!(
            (r.exponent / r.expected - 1.0).abs() < 0.05,
            "{curve} {m}: {}",
            r.exponent
        );
    }
    assert!(decay_report(&p, 5).is_err());
}

#[test]
fn solver_preconditions() {
    let p = Parameters::new(5).unwrap();
    assert!(solve_profile(&p, 10.0, 1e-8).is_err());
    assert!(solve_profile(&p, 100.0, 1e-3).is_err());
    assert!(solve_profile(&p, 100.0, 0.0).is_err());
}

fn unit() -> Box<dyn Fn(f64) -> (f64, f64) + Send + Sync> {
    Box::new(|_| (1.0, 0.0))
}

#[test]
fn unit_barrier_is_the_profile() {
    let p = base(5);
    let b = perturb_profile(&p, unit(), unit(), &[1.0]).unwrap();
    for k in 0..100 {
        let z = 0.1 * k as f64;
        assert_eq!(b.eval(z, 3.0).0, p.eval(z).0);
        let (dl, _) = b.scale_derivatives(z, 3.0);
        let expected = p.support_function(z) / (1.0 - p.params.alpha);
        assert_relative_eq!(dl, expected, max_relative = 1e-12);
        assert!(dl > 0.0);
    }
    let bad = perturb_profile(&p, Box::new(|_| (-1.0, 0.0)), unit(), &[1.0]);
    assert!(bad.is_err());
}

#[test]
fn upper_barrier_lies_below_its_unstretched_profile() {
    let p = base(5);
    let params = p.params.clone();
    let tau0 = params.tau_of(0.01);
    let (_, upper) = barrier_pair(&p, 3.0, tau0).unwrap();
    for &tau in &[tau0, 2.0 * tau0, 10.0 * tau0] {
        let (lam, _) = (upper.lambda_fn)(tau);
        let (mu, _) = (upper.mu_fn)(tau);
        assert!(mu > 1.0);
        let plain = scale_profile(&p, lam).unwrap();
        for k in 1..200 {
            let z = 0.05 * k as f64;
            assert!(upper.eval(z, tau).0 <= plain.eval(z).0);
        }
    }
}

#[test]
fn lower_barrier_is_a_subsolution() {
    let p = base(5);
    let params = p.params.clone();
    let tau0 = params.tau_of(0.01);
    let vt = params.vartheta.unwrap();
    let (lower, _) = barrier_pair(&p, 3.0, tau0).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..40 {
        let tau = tau0 * 10f64.powf(3.0 * i as f64 / 39.0);
        let z_max = (2.0 * params.sigma * tau).powf(0.5 * (1.0 - vt));
        for j in 0..25 {
            let z = z_max * j as f64 / 24.0;
            let r = lower.residual(z, tau);
            // The closed form agrees with the chain-rule evaluation.
            let d = lower.residual_direct(z, tau);
            assert!((r - d).abs() <= 1e-8 * (1.0 + d.abs()), "z={z} tau={tau}: {r} vs {d}");
            worst = worst.max(r);
        }
    }
    assert!(worst <= 1e-10, "largest residual {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaling_composes(k1 in 0.2f64..5.0, k2 in 0.2f64..5.0, r in 0.0f64..200.0) {
        let p = base(5);
        let a = scale_profile(&scale_profile(&p, k1).unwrap(), k2).unwrap();
        let b = scale_profile(&p, k1 * k2).unwrap();
        let (va, vb) = (a.eval(r).0, b.eval(r).0);
        prop_assert!((va - vb).abs() <= 1e-10 * vb.abs().max(1.0));
    }

    #[test]
    fn support_function_positive_off_grid(r in 0.0f64..900.0, k in 0.3f64..3.0) {
        let p = scale_profile(&base(5), k).unwrap();
        prop_assert!(p.support_function(r) > 0.0);
    }
}
