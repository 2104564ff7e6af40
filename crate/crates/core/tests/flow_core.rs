use std::f64::consts::SQRT_2;

use simons_flow::flow_core::*;
use simons_flow::minimal_profile::{canonical_profile, scale_profile, to_cone_graph};
use simons_flow::Parameters;

fn cylinder(cfl: f64) -> FlowConfig {
    let mut c = FlowConfig::new(5).unwrap();
    c.initial = InitialKind::Cylinder { r0: 1.0 };
    c.outer_bc = OuterBc::Free;
    c.t0 = -0.1;
    c.t_min = 0.05;
    c.snapshot_count = 1;
    c.cfl = cfl;
    c
}

/// Largest relative deviation from `u_hat^2 = r0^2 - 2(n-1)(t - t0)`.
fn cylinder_error(c: &FlowConfig) -> f64 {
    let tr = run(c).unwrap();
    assert!(tr.termination.is_admissible(), "{}", tr.termination);
    let s = tr.snapshots.last().unwrap();
    assert_eq!(s.t, -c.t_min);
    let n = c.params.nf();
    let exact = (1.0 - 2.0 * (n - 1.0) * (s.t - c.t0)).sqrt();
    s.u_hat()
        .iter()
        .map(|u| ((u - exact) / exact).abs())
        .fold(0.0, f64::max)
}

#[test]
fn cylinder_matches_closed_form_at_second_order() {
    let coarse = cylinder_error(&cylinder(0.1));
    let fine = cylinder_error(&cylinder(0.05));
    assert!(coarse < 1e-4, "{coarse:e}");
    let order = (coarse / fine).log2();
    assert!((1.8..=2.2).contains(&order), "observed order {order}");
}

#[test]
fn stationary_profile_barely_moves() {
    let mut c = FlowConfig::new(5).unwrap();
    c.initial = InitialKind::Profile { k: 1.0 };
    let mut s = Solver::new(&c).unwrap();
    // The semi-discrete residual of the exact profile is the truncation error.
    let trunc = s.state().velocity.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(trunc > 0.0 && trunc < 1e-2, "{trunc:e}");
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dt = c.cfl * s.dt_limit();
        s.step(dt).unwrap();
        worst = worst.max(s.velocity(&s.d).iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    assert!(worst < 10.0 * trunc, "{worst:e} vs {trunc:e}");
}

#[test]
fn single_step_stays_positive_and_rejects_large_steps() {
    let c = FlowConfig::new(5).unwrap();
    let st = build_initial_data(&c).unwrap();
    let s = Solver::from_state(&c, &st).unwrap();
    let lim = s.dt_limit();
    let next = step(&c, &st, 0.5 * lim).unwrap();
    assert!(next.u_hat().iter().all(|u| *u > 0.0));
    assert!(next.t > st.t);
    assert!(step(&c, &st, 2.0 * lim).is_err());
    assert!(step(&c, &st, 0.0).is_err());
}

#[test]
fn initial_tip_is_the_unit_profile() {
    let c = FlowConfig::new(5).unwrap();
    let st = build_initial_data(&c).unwrap();
    let ell = c.tip_scale(c.t0);
    let psi0 = canonical_profile(&c.params).unwrap().psi0();
    assert!(((st.x[0] + st.d[0]) / ell / psi0 - 1.0).abs() < 1e-12);
    assert!(st.u_hat().iter().all(|u| *u > 0.0));
}

/// `u` of the intermediate region evaluated in closed form.
fn intermediate(p: &Parameters, m: f64, a0: f64, a1: f64, x: f64) -> f64 {
    let a = p.alpha;
    (1.0 + a1 + a0) * m * m * x.powf(a)
        + (2.0 + a1) * p.upsilon1 * m * x.powf(a + 2.0)
        + p.upsilon2 * x.powf(2.0 * p.lambda2() + 1.0)
}

#[test]
fn intermediate_slice_matches_the_closed_form() {
    for (a0, a1) in [(0.0, 0.0), (2e-3, -1e-3)] {
        let mut c = FlowConfig::new(5).unwrap();
        c.a0 = a0;
        c.a1 = a1;
        let p = c.params.clone();
        let m = -c.t0;
        let st = build_initial_data(&c).unwrap();
        let g = to_diagonal_graph(&st, 2.0 * m.sqrt()).unwrap();
        for (x, u) in g.xd.iter().zip(&g.u) {
            if *x > 0.5 * c.rho {
                break;
            }
            let want = intermediate(&p, m, a0, a1, *x);
            assert!((u / want - 1.0).abs() < 1e-10, "X={x}: {u:e} vs {want:e}");
        }
        // At X = sqrt(-t0) the three terms collapse to one power of (-t0).
        let x = m.sqrt();
        let collapsed = m.powf(p.lambda2() + 0.5) * ((1.0 + a1 + a0) + (2.0 + a1) * p.upsilon1 + p.upsilon2);
        assert!((intermediate(&p, m, a0, a1, x) / collapsed - 1.0).abs() < 1e-13);
        if a0 == 0.0 && a1 == 0.0 {
            let base = m.powf(p.lambda2() + 0.5) * (1.0 + 2.0 * p.upsilon1 + p.upsilon2);
            assert!((collapsed / base - 1.0).abs() < 1e-15);
        }
        let g = to_diagonal_graph(&st, 0.5 * x).unwrap();
        let j = g.xd.iter().position(|v| *v >= x).unwrap();
        let w = (x - g.xd[j - 1]) / (g.xd[j] - g.xd[j - 1]);
        let u = (1.0 - w) * g.u[j - 1] + w * g.u[j];
        assert!((u / collapsed - 1.0).abs() < 1e-3, "{u:e} vs {collapsed:e}");
    }
}

#[test]
fn outer_tail_obeys_its_bound() {
    let c = FlowConfig::new(5).unwrap();
    let st = build_initial_data(&c).unwrap();
    let g = to_diagonal_graph(&st, c.rho / 6.0).unwrap();
    assert!(!g.xd.is_empty());
    for (x, u) in g.xd.iter().zip(&g.u) {
        assert!(u.abs() <= x.min(1.0) / 5.0, "X={x}: {u}");
    }
}

#[test]
fn initial_data_is_convex_inside_the_outer_seam() {
    let c = FlowConfig::new(5).unwrap();
    let st = build_initial_data(&c).unwrap();
    let (_, d2) = offset_derivatives(&st.x, &st.d, 2);
    for (j, v) in d2.iter().enumerate() {
        let xd = (2.0 * st.x[j] + st.d[j]) / SQRT_2;
        if xd > c.rho {
            break;
        }
        assert!(*v >= -1e-8, "x={}: {v:e}", st.x[j]);
    }
}

#[test]
fn diagonal_graph_of_the_profile_is_its_cone_graph() {
    let mut c = FlowConfig::new(5).unwrap();
    c.initial = InitialKind::Profile { k: 1.0 };
    let st = build_initial_data(&c).unwrap();
    let cone = to_cone_graph(&scale_profile(&canonical_profile(&c.params).unwrap(), 1.0).unwrap()).unwrap();
    let g = to_diagonal_graph(&st, cone.z0() * 1.01).unwrap();
    let end = 0.9 * st.x.last().unwrap() * SQRT_2;
    let mut worst: f64 = 0.0;
    for (x, u) in g.xd.iter().zip(&g.u) {
        if *x > end {
            break;
        }
        worst = worst.max((u - cone.eval(*x).0).abs());
    }
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn default_run_stays_in_the_sandwich() {
    let c = FlowConfig::new(5).unwrap();
    let tr = run(&c).unwrap();
    assert!(
        tr.snapshots.len() >= 20,
        "{} snapshots, {}",
        tr.snapshots.len(),
        tr.termination
    );
    let base = canonical_profile(&c.params).unwrap();
    let e = c.params.scale_exponent();
    let lo = 0.5 * 0.5f64.powf(e) * base.psi0();
    let hi = 2.0 * 1.5f64.powf(e) * base.psi0();
    for w in tr.snapshots.windows(2) {
        assert!(w[1].t > w[0].t);
    }
    for s in &tr.snapshots {
        let w0 = (s.x[0] + s.d[0]) / c.params.tip_scale(-s.t);
        assert!(lo <= w0 && w0 <= hi, "-t={:e}: {w0}", -s.t);
        assert!(s.u_hat().iter().all(|u| *u > 0.0));
    }
}

#[test]
fn late_t_min_gives_only_the_initial_snapshot() {
    let mut c = FlowConfig::new(5).unwrap();
    c.t_min = 0.02;
    let tr = run(&c).unwrap();
    assert_eq!(tr.snapshots.len(), 1);
    assert_eq!(tr.snapshots[0].t, c.t0);
    assert!(snapshot_times(&c).is_empty());
}

#[test]
fn tiny_cap_terminates_on_the_a_priori_bound() {
    let mut c = FlowConfig::new(5).unwrap();
    c.lambda_cap = 1e-6;
    let tr = run(&c).unwrap();
    assert!(matches!(tr.termination, Termination::APrioriViolated { .. }));
    assert!(tr.termination.to_string().contains("a-priori bound violated"));
    assert!(!tr.termination.is_admissible());
}

#[test]
fn snapshot_times_are_geometric() {
    let c = FlowConfig::new(5).unwrap();
    let ts = snapshot_times(&c);
    assert_eq!(ts.len(), c.snapshot_count);
    assert_eq!(*ts.last().unwrap(), -c.t_min);
    let r0 = ts[1] / ts[0];
    for w in ts.windows(2).take(ts.len() - 2) {
        assert!((w[1] / w[0] / r0 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn config_validation() {
    assert!(FlowConfig::parse("n = 5\nunknown_key = 3\n").is_err());
    assert!(FlowConfig::parse("n = 5\nnx\n").is_err());
    assert!(FlowConfig::parse("n = 5\ncfl = 2\n").is_err());
    assert!(FlowConfig::parse("n = 4\n").is_err());
    assert!(FlowConfig::parse("t0 = 0.01\n").is_err());
    assert!(FlowConfig::parse("a0 = 0.5\n").is_err());
    assert!(FlowConfig::parse("initial = sphere\n").is_err());
    let c = FlowConfig::parse("# comment\ninitial = cylinder\ncylinder_r0 = 2\nn = 4\n").unwrap();
    assert_eq!(c.initial, InitialKind::Cylinder { r0: 2.0 });
    assert_eq!(FlowConfig::parse(&c.to_text()).unwrap().to_text(), c.to_text());
}
