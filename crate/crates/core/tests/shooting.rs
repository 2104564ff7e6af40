use simons_flow::flow_core::{run, FlowConfig, InitialKind, Termination};
use simons_flow::shooting::*;
use simons_flow::spectral::{cutoff_deficit, SpectralBasis};

fn template() -> (FlowConfig, SpectralBasis) {
    let mut c = FlowConfig::new(5).unwrap();
    c.cfl = 0.5;
    let bs = SpectralBasis::new(&c.params).unwrap();
    (c, bs)
}

fn phi(c: &FlowConfig, bs: &SpectralBasis, a: [f64; 2], t1: f64) -> [f64; 2] {
    evaluate_phi(c, bs, a[0], a[1], t1).unwrap().phi.expect("feasible")
}

#[test]
fn phi_at_t0_is_the_identity_up_to_cutoff_deficits() {
    let (c, bs) = template();
    let p = &c.params;
    let s0 = -(-c.t0).ln();
    let e = (-p.lambda2() * s0).exp();
    let eps = (-p.sigma * s0).exp();
    let r = c.box_radius();
    let mut points = vec![[0.0, 0.0]];
    for k in 0..8 {
        let th = std::f64::consts::TAU * k as f64 / 8.0;
        points.push([r * th.cos(), r * th.sin()]);
    }
    for a in points {
        let got = phi(&c, &bs, a, c.t0);
        let b = [a[0], a[1], 1.0];
        for i in 0..2 {
            let mut want = 0.0;
            let mut bound = 0.0;
            for (j, bj) in b.iter().enumerate() {
                let d = cutoff_deficit(&bs, i, j, eps, c.rho, c.beta).unwrap();
                let kron = if i == j { 1.0 } else { 0.0 };
                want += e * bj * bs.c[i] / bs.c[j] * (kron + d);
                bound += e * (bj * bs.c[i] / bs.c[j] * d).abs();
            }
            assert!(
                (got[i] - want).abs() < 1e-9 * e,
                "a={a:?} i={i}: {} vs {}",
                got[i],
                want
            );
            assert!((got[i] - a[i] * e).abs() <= bound + 1e-9 * e, "a={a:?} i={i}");
        }
    }
}

#[test]
fn phi_at_t0_is_affine() {
    let (c, bs) = template();
    let r = 0.5 * c.box_radius();
    let z = phi(&c, &bs, [0.0, 0.0], c.t0);
    let pa = phi(&c, &bs, [r, 0.0], c.t0);
    let pb = phi(&c, &bs, [0.0, -r], c.t0);
    let pab = phi(&c, &bs, [r, -r], c.t0);
    let scale = (pa[0] - z[0]).abs();
    for i in 0..2 {
        let lhs = pab[i] - z[i];
        let rhs = (pa[i] - z[i]) + (pb[i] - z[i]);
        assert!((lhs - rhs).abs() < 1e-6 * scale, "i={i}: {lhs:e} vs {rhs:e}");
    }
}

#[test]
fn zero_origin_has_small_nonzero_phi_after_a_short_horizon() {
    let (c, bs) = template();
    let t1 = (-0.25f64).exp() * c.t0;
    let ev = evaluate_phi(&c, &bs, 0.0, 0.0, t1).unwrap();
    assert!(ev.feasible);
    let e1 = (-t1).powf(c.params.lambda2());
    assert!(ev.norm() > 0.0 && ev.norm() < 1e-2 * e1, "{:e}", ev.norm());
    assert!(ev.state.is_some());
}

#[test]
fn short_horizon_tuning_converges_quickly() {
    let (c, bs) = template();
    let t1 = (-0.25f64).exp() * c.t0;
    let tol = stage_tolerance(&c, t1);
    let r = tune(&c, &bs, t1, tol, [0.0, 0.0], TuneOptions::default()).unwrap();
    assert!(r.converged, "{r:?}");
    assert!(r.iterations <= 10, "{} iterations", r.iterations);
    assert!(r.phi_norm <= tol);
    assert!(r.a0.hypot(r.a1) <= c.box_radius());
    assert!((r.k_estimate - 1.0).abs() < 0.1);
    assert!(r.log.iter().all(|e| e.horizon == -t1));
}

#[test]
fn zero_box_returns_the_origin() {
    let (c, bs) = template();
    let t1 = (-0.25f64).exp() * c.t0;
    let opts = TuneOptions {
        box_radius: Some(0.0),
        ..TuneOptions::default()
    };
    let r = tune(&c, &bs, t1, 1e-30, [1e-3, 1e-3], opts).unwrap();
    assert_eq!((r.a0, r.a1), (0.0, 0.0));
    assert!(!r.converged);
    assert_eq!(r.phi_norm, evaluate_phi(&c, &bs, 0.0, 0.0, t1).unwrap().norm());
}

#[test]
fn jacobian_is_stable_under_step_halving() {
    let (c, bs) = template();
    let t1 = (-0.25f64).exp() * c.t0;
    let h = 1e-2 * c.box_radius();
    let col = |h: f64, k: usize| {
        let mut ap = [0.0, 0.0];
        let mut am = [0.0, 0.0];
        ap[k] = h;
        am[k] = -h;
        let (p, m) = (phi(&c, &bs, ap, t1), phi(&c, &bs, am, t1));
        [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)]
    };
    for k in 0..2 {
        let full = col(h, k);
        let half = col(0.5 * h, k);
        let norm = full[0].hypot(full[1]);
        for i in 0..2 {
            assert!((full[i] - half[i]).abs() <= 0.1 * norm, "column {k} entry {i}");
        }
    }
}

#[test]
fn feasible_set_shrinks_in_time() {
    let (mut c, bs) = template();
    // A corner of the box leaves the admissible class well before t_min.
    let r = c.box_radius();
    c.a0 = r;
    let tr = run(&c).unwrap();
    let t_end = match tr.termination {
        Termination::Pinched { t, .. } | Termination::APrioriViolated { t, .. } | Termination::GraphLost { t, .. } => t,
        ref other => panic!("expected early termination, got {other}"),
    };
    c.a0 = 0.0;
    // Every recorded snapshot time before the failure is reachable.
    for s in tr.snapshots.iter().skip(1).step_by(3) {
        let ev = evaluate_phi(&c, &bs, r, 0.0, s.t).unwrap();
        assert!(ev.feasible, "-t={:e}", -s.t);
    }
    // Past the failure the point stays infeasible.
    for t in [0.5 * t_end, 0.1 * t_end] {
        let ev = evaluate_phi(&c, &bs, r, 0.0, t).unwrap();
        assert!(!ev.feasible && ev.termination.is_some(), "-t={:e}", -t);
    }
}

#[test]
fn evaluation_preconditions() {
    let (c, bs) = template();
    assert!(evaluate_phi(&c, &bs, 0.0, 0.0, 0.5 * c.t0.abs()).is_err());
    assert!(evaluate_phi(&c, &bs, 0.0, 0.0, 2.0 * c.t0).is_err());
    let mut cyl = c.clone();
    cyl.initial = InitialKind::Cylinder { r0: 1.0 };
    assert!(evaluate_phi(&cyl, &bs, 0.0, 0.0, c.t0).is_err());
    assert!(tune(&c, &bs, c.t0, 1.0, [0.0, 0.0], TuneOptions::default()).is_err());
}
