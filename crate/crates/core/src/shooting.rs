//! Tuning `(a0, a1)` so that the unstable projections vanish at a matching time.
//!
//! Each evaluation of `Phi_{t1}(a0, a1)` is a full flow run from `t0`. The
//! matching time is pushed towards the singular time in stages, each stage
//! starting from the root of the previous one.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{precondition, Result};
use crate::flow_core::{snapshot_times, FlowConfig, FlowState, InitialKind, Solver, Termination};
use crate::rescaling_diagnostics::to_type1;
use crate::spectral::{project_modes, SpectralBasis};

/// Outcome of one `Phi` evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct PhiEval {
    pub a0: f64,
    pub a1: f64,
    /// `(Phi_0, Phi_1)`, absent when the run did not reach `t1` admissibly.
    pub phi: Option<[f64; 2]>,
    /// `e^{lambda_2 s} <v, c_2 phi_2>` at `t1`.
    pub k_estimate: Option<f64>,
    pub feasible: bool,
    /// `-t1`.
    pub horizon: f64,
    /// Why the run stopped early, if it did.
    pub termination: Option<String>,
    #[serde(skip)]
    pub state: Option<FlowState>,
}

impl PhiEval {
    pub fn norm(&self) -> f64 {
        self.phi.map_or(f64::INFINITY, |p| p[0].hypot(p[1]))
    }
}

/// Run the flow for `template` with `(a0, a1)` up to `t1` and project.
///
/// The admissibility monitor runs at the template's snapshot times before
/// `t1` and at `t1` itself. Early termination yields an infeasible point,
/// while numeric failures are errors.
pub fn evaluate_phi(template: &FlowConfig, basis: &SpectralBasis, a0: f64, a1: f64, t1: f64) -> Result<PhiEval> {
    if !(t1 >= template.t0 && t1 < 0.0) {
        return precondition(format!("matching time {t1} must lie in [t0, 0)"));
    }
    if template.initial != InitialKind::Singular {
        return precondition("shooting needs singular initial data");
    }
    let mut cfg = template.clone();
    cfg.a0 = a0;
    cfg.a1 = a1;
    let mut solver = Solver::new(&cfg)?;
    let infeasible = |term: Termination| PhiEval {
        a0,
        a1,
        phi: None,
        k_estimate: None,
        feasible: false,
        horizon: -t1,
        termination: Some(term.to_string()),
        state: None,
    };
    if let Some(term) = solver.monitor() {
        return Ok(infeasible(term));
    }
    let stops = snapshot_times(&cfg)
        .into_iter()
        .filter(|&t| t < t1)
        .chain(std::iter::once(t1));
    for t in stops {
        if t > solver.t {
            if let Err(term) = solver.advance_to(t) {
                return Ok(infeasible(term));
            }
        }
        if let Some(term) = solver.monitor() {
            return Ok(infeasible(term));
        }
    }
    let state = solver.state();
    let view = to_type1(&state, &cfg.params, cfg.rho, cfg.beta)?;
    let m = project_modes(basis, &view, cfg.rho, cfg.beta, 3)?;
    let k = (cfg.params.lambda2() * view.s).exp() * m[2];
    Ok(PhiEval {
        a0,
        a1,
        phi: Some([m[0], m[1]]),
        k_estimate: Some(k),
        feasible: true,
        horizon: -t1,
        termination: None,
        state: Some(state),
    })
}

/// Result of tuning at one matching time.
#[derive(Debug, Clone, Serialize)]
pub struct ShootingResult {
    pub a0: f64,
    pub a1: f64,
    pub t1: f64,
    pub phi_norm: f64,
    pub tol: f64,
    pub iterations: usize,
    pub k_estimate: f64,
    pub converged: bool,
    /// Set when the root-finder gave up, e.g. winding number zero.
    pub note: Option<String>,
    pub log: Vec<PhiEval>,
}

/// Root-finder settings.
#[derive(Debug, Clone, Copy)]
pub struct TuneOptions {
    pub max_iter: usize,
    /// Jacobian step as a fraction of the box radius.
    pub jacobian_step: f64,
    /// Largest Jacobian condition number trusted before falling back to bisection.
    pub max_condition: f64,
    pub boundary_points: usize,
    /// Replaces the config's box radius when set.
    pub box_radius: Option<f64>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            max_iter: 20,
            jacobian_step: 1e-3,
            max_condition: 1e10,
            boundary_points: 16,
            box_radius: None,
        }
    }
}

/// Tolerance `1e-3 e^{-lambda_2 s1}` used for every stage.
pub fn stage_tolerance(template: &FlowConfig, t1: f64) -> f64 {
    1e-3 * (-t1).powf(template.params.lambda2())
}

type Mat = [[f64; 2]; 2];

fn solve2(j: &Mat, r: [f64; 2]) -> Option<[f64; 2]> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if !(det.abs() > 0.0) || !det.is_finite() {
        return None;
    }
    Some([
        (j[1][1] * r[0] - j[0][1] * r[1]) / det,
        (j[0][0] * r[1] - j[1][0] * r[0]) / det,
    ])
}

fn condition(j: &Mat) -> f64 {
    // 2x2 singular values from the Frobenius norm and determinant.
    let f2 = j.iter().flatten().map(|v| v * v).sum::<f64>();
    let det = (j[0][0] * j[1][1] - j[0][1] * j[1][0]).abs();
    let disc = (f2 * f2 - 4.0 * det * det).max(0.0).sqrt();
    let smax = (0.5 * (f2 + disc)).sqrt();
    let smin2 = 0.5 * (f2 - disc);
    if smin2 <= 0.0 {
        return f64::INFINITY;
    }
    smax / smin2.sqrt()
}

/// Project `a` onto the closed disc of radius `r`.
fn clamp_to_box(a: [f64; 2], r: f64) -> [f64; 2] {
    let n = a[0].hypot(a[1]);
    if n <= r {
        a
    } else {
        [a[0] * r / n, a[1] * r / n]
    }
}

struct Tuner<'a> {
    template: &'a FlowConfig,
    basis: &'a SpectralBasis,
    t1: f64,
    log: Vec<PhiEval>,
}

impl Tuner<'_> {
    fn eval_many(&mut self, pts: &[[f64; 2]]) -> Result<Vec<PhiEval>> {
        let out: Result<Vec<PhiEval>> = pts
            .par_iter()
            .map(|a| evaluate_phi(self.template, self.basis, a[0], a[1], self.t1))
            .collect();
        let out = out?;
        self.log.extend(out.iter().map(|e| PhiEval {
            state: None,
            ..e.clone()
        }));
        Ok(out)
    }

    fn eval(&mut self, a: [f64; 2]) -> Result<PhiEval> {
        Ok(self.eval_many(&[a])?.pop().unwrap())
    }

    /// Central-difference Jacobian at `a`. The step is shrunk by 4 while a
    /// stencil point is infeasible; `None` after eight attempts.
    fn jacobian(&mut self, a: [f64; 2], h0: f64) -> Result<Option<Mat>> {
        let mut h = h0;
        'retry: for _ in 0..8 {
            let pts = [[a[0] + h, a[1]], [a[0] - h, a[1]], [a[0], a[1] + h], [a[0], a[1] - h]];
            let e = self.eval_many(&pts)?;
            let mut j = [[0.0; 2]; 2];
            for col in 0..2 {
                let (Some(p), Some(m)) = (e[2 * col].phi, e[2 * col + 1].phi) else {
                    h *= 0.25;
                    continue 'retry;
                };
                for row in 0..2 {
                    j[row][col] = (p[row] - m[row]) / (2.0 * h);
                }
            }
            return Ok(Some(j));
        }
        Ok(None)
    }

    /// Winding number of `Phi` around the origin along the circle of radius
    /// `r` about `c`, or `None` if a boundary point is infeasible.
    fn winding(&mut self, c: [f64; 2], r: f64, pts: usize) -> Result<(Option<i32>, Vec<PhiEval>)> {
        let ring: Vec<[f64; 2]> = (0..pts)
            .map(|k| {
                let th = std::f64::consts::TAU * k as f64 / pts as f64;
                [c[0] + r * th.cos(), c[1] + r * th.sin()]
            })
            .collect();
        let e = self.eval_many(&ring)?;
        let mut total = 0.0;
        for k in 0..pts {
            let (Some(p), Some(q)) = (e[k].phi, e[(k + 1) % pts].phi) else {
                return Ok((None, e));
            };
            let mut d = q[1].atan2(q[0]) - p[1].atan2(p[0]);
            if d > std::f64::consts::PI {
                d -= std::f64::consts::TAU;
            } else if d < -std::f64::consts::PI {
                d += std::f64::consts::TAU;
            }
            total += d;
        }
        Ok((Some((total / std::f64::consts::TAU).round() as i32), e))
    }
}

/// Find `(a0, a1)` in the admissible disc with `|Phi_{t1}| <= tol`, starting at `start`.
///
/// Damped Newton with a central-difference Jacobian and Broyden updates; when
/// the Jacobian is unusable the disc is bisected guided by the winding number
/// of `Phi` on circle boundaries.
pub fn tune(
    template: &FlowConfig,
    basis: &SpectralBasis,
    t1: f64,
    tol: f64,
    start: [f64; 2],
    opts: TuneOptions,
) -> Result<ShootingResult> {
    if !(t1 > template.t0 && t1 < 0.0) {
        return precondition(format!("matching time {t1} must lie in (t0, 0)"));
    }
    let radius = opts.box_radius.unwrap_or_else(|| template.box_radius());
    let mut tuner = Tuner {
        template,
        basis,
        t1,
        log: Vec::new(),
    };
    let mut a = clamp_to_box(start, radius);
    let mut cur = tuner.eval(a)?;
    let finish = |tuner: Tuner, cur: &PhiEval, iterations: usize, note: Option<String>| ShootingResult {
        a0: cur.a0,
        a1: cur.a1,
        t1,
        phi_norm: cur.norm(),
        tol,
        iterations,
        k_estimate: cur.k_estimate.unwrap_or(f64::NAN),
        converged: cur.norm() <= tol,
        note,
        log: tuner.log,
    };
    if cur.norm() <= tol {
        return Ok(finish(tuner, &cur, 0, None));
    }
    if radius == 0.0 {
        return Ok(finish(tuner, &cur, 0, Some("empty box".into())));
    }
    let h = opts.jacobian_step * radius;
    let mut jac = if cur.feasible { tuner.jacobian(a, h)? } else { None };
    let mut iterations = 0;
    while iterations < opts.max_iter && cur.norm() > tol {
        iterations += 1;
        let usable = jac.filter(|j| condition(j) < opts.max_condition);
        let Some(j) = usable else {
            return bisect(tuner, a, radius, tol, iterations, opts, cur, finish);
        };
        let phi = cur.phi.unwrap();
        let Some(delta) = solve2(&j, [-phi[0], -phi[1]]) else {
            return bisect(tuner, a, radius, tol, iterations, opts, cur, finish);
        };
        let mut lam = 1.0;
        let mut accepted = None;
        for _ in 0..8 {
            let trial = clamp_to_box([a[0] + lam * delta[0], a[1] + lam * delta[1]], radius);
            let e = tuner.eval(trial)?;
            if e.feasible && e.norm() < cur.norm() {
                accepted = Some((trial, e));
                break;
            }
            lam *= 0.5;
        }
        let Some((next, e)) = accepted else {
            // No descent along the Newton direction: refresh the Jacobian once.
            let fresh = tuner.jacobian(a, h)?;
            if fresh == jac {
                break;
            }
            jac = fresh;
            continue;
        };
        let (p0, p1) = (cur.phi.unwrap(), e.phi.unwrap());
        let s = [next[0] - a[0], next[1] - a[1]];
        let y = [p1[0] - p0[0], p1[1] - p0[1]];
        let ss = s[0] * s[0] + s[1] * s[1];
        if ss > 0.0 {
            let mut jn = j;
            for row in 0..2 {
                let r = y[row] - (j[row][0] * s[0] + j[row][1] * s[1]);
                for col in 0..2 {
                    jn[row][col] += r * s[col] / ss;
                }
            }
            jac = Some(jn);
        }
        a = next;
        cur = e;
    }
    let note = (cur.norm() > tol).then(|| format!("stopped after {iterations} iterations"));
    Ok(finish(tuner, &cur, iterations, note))
}

#[allow(clippy::too_many_arguments)]
fn bisect<'a>(
    mut tuner: Tuner<'a>,
    mut centre: [f64; 2],
    radius: f64,
    tol: f64,
    mut iterations: usize,
    opts: TuneOptions,
    mut best: PhiEval,
    finish: impl Fn(Tuner<'a>, &PhiEval, usize, Option<String>) -> ShootingResult,
) -> Result<ShootingResult> {
    let mut r = radius;
    // Start from the whole disc.
    let (w, ring) = tuner.winding([0.0, 0.0], radius, opts.boundary_points)?;
    if ring.iter().all(|e| !e.feasible) {
        return Ok(finish(
            tuner,
            &best,
            iterations,
            Some("box too large for the grid resolution: every boundary run is infeasible".into()),
        ));
    }
    if w != Some(1) {
        return Ok(finish(
            tuner,
            &best,
            iterations,
            Some(format!("winding number {w:?} on the box boundary")),
        ));
    }
    centre = if centre[0].hypot(centre[1]) <= radius {
        [0.0, 0.0]
    } else {
        centre
    };
    while iterations < opts.max_iter && best.norm() > tol {
        iterations += 1;
        r *= 0.5;
        // Pick the half-radius sub-disc (of four candidates) that still winds once.
        let mut moved = false;
        for k in 0..4 {
            let th = std::f64::consts::FRAC_PI_2 * k as f64;
            let c = [centre[0] + r * th.cos(), centre[1] + r * th.sin()];
            let (w, ring) = tuner.winding(c, r, opts.boundary_points)?;
            for e in ring {
                if e.norm() < best.norm() {
                    best = e;
                }
            }
            if w == Some(1) {
                centre = c;
                moved = true;
                break;
            }
        }
        if !moved {
            let e = tuner.eval(centre)?;
            if e.norm() < best.norm() {
                best = e;
            }
        }
    }
    let note = (best.norm() > tol).then(|| "bisection did not reach the tolerance".to_string());
    Ok(finish(tuner, &best, iterations, note))
}

/// Matching times `t0 e^{-k}`, the last one clamped to `-t_min`.
pub fn stage_times(template: &FlowConfig) -> Vec<f64> {
    let mut out = Vec::new();
    let mut m = -template.t0;
    loop {
        m *= (-1.0f64).exp();
        if m <= template.t_min * (1.0 + 1e-12) {
            out.push(-template.t_min);
            return out;
        }
        out.push(-m);
    }
}

/// Every stage of a staged tuning run.
#[derive(Debug, Clone, Serialize)]
pub struct StagedResult {
    pub stages: Vec<ShootingResult>,
}

impl StagedResult {
    pub fn last(&self) -> Option<&ShootingResult> {
        self.stages.last()
    }
}

/// Tune at each of [`stage_times`], warm-starting from the previous root.
///
/// `on_stage` is called after every stage (for logging).
pub fn tune_staged(
    template: &FlowConfig,
    basis: &SpectralBasis,
    opts: TuneOptions,
    mut on_stage: impl FnMut(&ShootingResult),
) -> Result<StagedResult> {
    let mut start = [template.a0, template.a1];
    let mut stages = Vec::new();
    for t1 in stage_times(template) {
        let r = tune(template, basis, t1, stage_tolerance(template, t1), start, opts)?;
        on_stage(&r);
        start = [r.a0, r.a1];
        stages.push(r);
    }
    Ok(StagedResult { stages })
}
