//! Rescaled views of a flow state, curvature fields and power-law fits.
//!
//! Type I: `y = x/sqrt(-t)`, `s = -ln(-t)`, `v = u/sqrt(-t)` on the diagonal graph.
//! Type II: `z = x/(-t)^(1/2+sigma)`, `tau = 1/(2 sigma (-t)^(2 sigma))`,
//! `w_hat = u_hat/(-t)^(1/2+sigma)` radially.

use serde::Serialize;

use crate::error::{precondition, Result};
use crate::flow_core::{offset_derivatives, to_diagonal_graph, FlowState, Trajectory};
use crate::minimal_profile::{BarrierProfile, ProfileSolution};
use crate::numerics::fit::power_fit;
use crate::numerics::interp::lagrange;
use crate::parameters::Parameters;

/// Type I view: `v(y, s) = u(sqrt(-t) y, t) / sqrt(-t)`, `s = -ln(-t)`.
#[derive(Debug, Clone, Serialize)]
pub struct TypeIView {
    pub s: f64,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub dv: Vec<f64>,
    /// Requested validity range `[beta e^{-sigma s}, rho e^{s/2}]`.
    pub valid: (f64, f64),
    /// Whether the diagonal graph failed to cover the requested range.
    pub partial: bool,
}

/// Rescale the diagonal graph of `state` by `sqrt(-t)`.
///
/// Nodes from half the inner cutoff outwards are kept so that interpolation
/// near the cutoff stays interior.
pub fn to_type1(state: &FlowState, params: &Parameters, rho: f64, beta: f64) -> Result<TypeIView> {
    let mt = -state.t;
    if !(mt > 0.0) {
        return precondition("type I view needs t < 0");
    }
    let sq = mt.sqrt();
    let s = -mt.ln();
    let lo = beta * mt.powf(params.sigma);
    let hi = rho / sq;
    let g = to_diagonal_graph(state, 0.5 * lo * sq)?;
    let y: Vec<f64> = g.xd.iter().map(|x| x / sq).collect();
    let v: Vec<f64> = g.u.iter().map(|u| u / sq).collect();
    let partial = y.is_empty() || y[0] > lo || *y.last().unwrap() < hi;
    Ok(TypeIView {
        s,
        y,
        v,
        dv: g.du,
        valid: (lo, hi),
        partial,
    })
}

/// Type II view of a state.
#[derive(Debug, Clone, Serialize)]
pub struct TypeIIView {
    pub tau: f64,
    pub minus_t: f64,
    /// Radial nodes `x / ell`.
    pub z: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub dw_hat: Vec<f64>,
    pub ddw_hat: Vec<f64>,
    /// `d_t u_hat` at the nodes (unrescaled).
    pub velocity: Vec<f64>,
    /// Diagonal graph `(z_diag, w)` for the part beyond `beta`.
    pub diag: Option<(Vec<f64>, Vec<f64>)>,
}

/// Rescale `state` by the tip scale `(-t)^(1/2+sigma)`.
pub fn to_type2(state: &FlowState, params: &Parameters, beta: f64) -> Result<TypeIIView> {
    let mt = -state.t;
    if !(mt > 0.0) {
        return precondition("type II view needs t < 0");
    }
    let ell = params.tip_scale(mt);
    let (d1, d2) = offset_derivatives(&state.x, &state.d, 4);
    let diag = to_diagonal_graph(state, beta * ell).ok().map(|g| {
        (
            g.xd.iter().map(|x| x / ell).collect(),
            g.u.iter().map(|u| u / ell).collect(),
        )
    });
    Ok(TypeIIView {
        tau: params.tau_of(mt),
        minus_t: mt,
        z: state.x.iter().map(|x| x / ell).collect(),
        w_hat: state.x.iter().zip(&state.d).map(|(x, d)| (x + d) / ell).collect(),
        dw_hat: d1.iter().map(|v| 1.0 + v).collect(),
        ddw_hat: d2.iter().map(|v| v * ell).collect(),
        velocity: state.velocity.clone(),
        diag,
    })
}

impl TypeIIView {
    /// `w_hat` at `z` by local Lagrange interpolation.
    pub fn w_at(&self, z: f64) -> f64 {
        lagrange(&self.z, &self.w_hat, z, 6)
    }

    /// `d_t u_hat` at `x = ell z`.
    pub fn velocity_at(&self, z: f64) -> f64 {
        lagrange(&self.z, &self.velocity, z, 6)
    }
}

/// Which part of the hypersurface a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Tip,
    Intermediate,
    Outer,
}

/// `|A|` and `H` on the radial nodes.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureField {
    pub x: Vec<f64>,
    pub a_norm: Vec<f64>,
    pub h: Vec<f64>,
    pub region: Vec<Region>,
}

impl CurvatureField {
    /// Largest `|A|` and `|H|` in `region`.
    pub fn sup(&self, region: Region) -> (f64, f64) {
        let mut out = (0.0f64, 0.0f64);
        for j in 0..self.x.len() {
            if self.region[j] == region {
                out.0 = out.0.max(self.a_norm[j]);
                out.1 = out.1.max(self.h[j].abs());
            }
        }
        out
    }
}

/// Second fundamental form and mean curvature of `state`.
///
/// `|A|` uses fourth-order differences; `H` is the normal speed
/// `d_t u_hat / sqrt(1 + u_hat_x^2)` of the semi-discrete scheme, which equals
/// the mean-curvature expression evaluated with the scheme's own stencils.
pub fn curvature(state: &FlowState, params: &Parameters, beta: f64) -> Result<CurvatureField> {
    let n = params.nf();
    let mt = -state.t;
    let ell = params.tip_scale(mt);
    let (d1, d2) = offset_derivatives(&state.x, &state.d, 4);
    let m = state.x.len();
    let mut a_norm = Vec::with_capacity(m);
    let mut h = Vec::with_capacity(m);
    let mut region = Vec::with_capacity(m);
    for j in 0..m {
        let x = state.x[j];
        let u = x + state.d[j];
        if !(u > 0.0) {
            return precondition(format!("curvature undefined where u_hat <= 0 (x = {x})"));
        }
        let ux = 1.0 + d1[j];
        let uxx = d2[j];
        let g = 1.0 + ux * ux;
        let rad = if j == 0 { uxx } else { ux / x };
        let a2 = ((uxx / g).powi(2) + (n - 1.0) * rad * rad + (n - 1.0) / (u * u)) / g;
        a_norm.push(a2.sqrt());
        let vel = if state.velocity.len() == m {
            state.velocity[j]
        } else {
            uxx / g + (n - 1.0) * (rad - 1.0 / u)
        };
        h.push(vel / g.sqrt());
        let xd = (x + u) / std::f64::consts::SQRT_2;
        region.push(if xd <= beta * ell {
            Region::Tip
        } else if xd <= mt.sqrt() {
            Region::Intermediate
        } else {
            Region::Outer
        });
    }
    Ok(CurvatureField {
        x: state.x.clone(),
        a_norm,
        h,
        region,
    })
}

/// Least-squares power law `q ~ C (-t)^exponent`.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub exponent: f64,
    pub intercept: f64,
    pub residual: f64,
    /// Range of `(-t)` that entered the fit.
    pub window: (f64, f64),
    pub samples: usize,
}

/// Fit `log q` against `log(-t)` over all pairs.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 8 {
        return precondition(format!("rate fit needs at least 8 samples, got {}", pairs.len()));
    }
    if let Some(bad) = pairs.iter().find(|(t, q)| !(*t > 0.0 && *q > 0.0)) {
        return precondition(format!("rate fit needs positive samples, got {bad:?}"));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(0.0, f64::max);
    if (hi / lo).log10() < 1.5 {
        return precondition(format!("rate fit window [{lo:e}, {hi:e}] spans less than 1.5 decades"));
    }
    let f = power_fit(&xs, &ys).ok_or_else(|| crate::Error::Numeric("degenerate rate fit".into()))?;
    Ok(RateFit {
        exponent: f.slope,
        intercept: f.intercept,
        residual: f.rms,
        window: (lo, hi),
        samples: pairs.len(),
    })
}

/// [`fit_rate`] after discarding the earliest quarter (the blending transient).
pub fn fit_rate_late(pairs: &[(f64, f64)]) -> Result<RateFit> {
    let skip = pairs.len() / 4;
    fit_rate(&pairs[skip..])
}

/// `sup |w_hat - psi_hat_k|` on `[0, 2 beta]` and where it is attained.
pub fn profile_distance(view: &TypeIIView, profile: &ProfileSolution, beta: f64) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    for j in 0..view.z.len() {
        let z = view.z[j];
        if z > 2.0 * beta {
            break;
        }
        let e = (view.w_hat[j] - profile.eval(z).0).abs();
        if e > best.0 {
            best = (e, z);
        }
    }
    best
}

/// `(sup |v|, sup |dv|)` over `y in [r_in, r_out]`.
pub fn cone_distance(view: &TypeIView, r_in: f64, r_out: f64) -> Result<(f64, f64)> {
    if view.y.is_empty() || view.y[0] > r_in || *view.y.last().unwrap() < r_out {
        return precondition(format!("annulus [{r_in}, {r_out}] not inside the type I view"));
    }
    let mut out = (0.0f64, 0.0f64);
    for j in 0..view.y.len() {
        if view.y[j] >= r_in && view.y[j] <= r_out {
            out.0 = out.0.max(view.v[j].abs());
            out.1 = out.1.max(view.dv[j].abs());
        }
    }
    Ok(out)
}

/// Barrier ordering margins on `[0, (2 sigma tau)^((1-vartheta)/2)]`.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    pub tau: f64,
    pub z_max: f64,
    /// `min (w_hat - lower)`.
    pub lower_margin: f64,
    pub lower_at: f64,
    /// `min (upper - w_hat)`.
    pub upper_margin: f64,
    pub upper_at: f64,
}

/// Compare `w_hat` against a barrier pair at the view's `tau`.
pub fn verify_barrier(
    view: &TypeIIView,
    lower: &BarrierProfile,
    upper: &BarrierProfile,
    params: &Parameters,
) -> Result<BarrierReport> {
    let Some(vt) = params.vartheta else {
        return precondition("barrier window needs vartheta (n >= 5)");
    };
    let tau = view.tau;
    let z_max = (2.0 * params.sigma * tau).powf(0.5 * (1.0 - vt));
    let mut r = BarrierReport {
        tau,
        z_max,
        lower_margin: f64::INFINITY,
        lower_at: 0.0,
        upper_margin: f64::INFINITY,
        upper_at: 0.0,
    };
    for j in 0..view.z.len() {
        let z = view.z[j];
        if z > z_max {
            break;
        }
        let w = view.w_hat[j];
        let lo = w - lower.eval(z, tau).0;
        let up = upper.eval(z, tau).0 - w;
        if lo < r.lower_margin {
            r.lower_margin = lo;
            r.lower_at = z;
        }
        if up < r.upper_margin {
            r.upper_margin = up;
            r.upper_at = z;
        }
    }
    Ok(r)
}

/// `min d^2 w_hat / dz^2` over `[0, z_max]` and where it is attained.
pub fn convexity_report(view: &TypeIIView, z_max: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for j in 0..view.z.len() {
        if view.z[j] > z_max {
            break;
        }
        if view.ddw_hat[j] < best.0 {
            best = (view.ddw_hat[j], view.z[j]);
        }
    }
    best
}

/// Least-squares `k` with `w_hat ~ psi_hat_k` on `[0, z_max]`, by Gauss-Newton
/// on the one-parameter scaling family.
pub fn fit_profile_k(view: &TypeIIView, base: &ProfileSolution, z_max: f64) -> Result<f64> {
    let e = base.params.scale_exponent();
    let mut k: f64 = 1.0;
    for _ in 0..30 {
        let s = k.powf(e);
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..view.z.len() {
            let z = view.z[j];
            if z > z_max {
                break;
            }
            // psi_hat_k(z) = s psi_hat(z/s); d/dk = (e s / k) * support(z/s).
            let (q, dq, _) = base.offset(z / s);
            let r = z / s;
            let val = s * (r + q);
            let sens = e * s / k * (q - r * dq);
            num += sens * (view.w_hat[j] - val);
            den += sens * sens;
        }
        if !(den > 0.0) {
            return precondition("profile fit window is empty");
        }
        let step = num / den;
        k += step;
        if !(k > 0.0) {
            return crate::error::numeric("profile fit left k > 0");
        }
        if step.abs() < 1e-14 * k {
            break;
        }
    }
    Ok(k)
}

/// One row of the time-series export.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesRow {
    pub minus_t: f64,
    pub tau: f64,
    pub sup_a_tip: f64,
    pub sup_a_intermediate: f64,
    pub sup_a_outer: f64,
    pub sup_h_tip: f64,
    pub sup_h_intermediate: f64,
    pub sup_h_outer: f64,
    pub h_axis: f64,
    pub profile_distance: f64,
    pub cone_distance: f64,
    pub convexity_min: f64,
    pub lower_margin: f64,
    pub upper_margin: f64,
}

/// Every diagnostic of a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub k_fit: f64,
    pub rows: Vec<SeriesRow>,
    pub rate_a_tip: Option<RateFit>,
    pub rate_h_axis: Option<RateFit>,
    pub rate_cone: Option<RateFit>,
    /// `(first post-transient, last)` values of `sup|H|/sup|A|` in the tip.
    pub ratio_h_over_a: (f64, f64),
    /// Velocity ratio at `z = 0, 1` over the last snapshots, and its prediction.
    pub lhopital: Vec<(f64, f64, f64)>,
}

/// Snapshot indices past the blending transient.
pub fn post_transient(len: usize) -> std::ops::Range<usize> {
    (len / 4)..len
}

/// Compute the full diagnostic set for a trajectory.
pub fn analyze(tr: &Trajectory, base: &ProfileSolution) -> Result<Diagnostics> {
    let c = &tr.config;
    let p = &c.params;
    let beta = c.beta;
    let last = tr
        .snapshots
        .last()
        .ok_or_else(|| crate::Error::Precondition("empty trajectory".into()))?;
    let v_last = to_type2(last, p, beta)?;
    let k_fit = fit_profile_k(&v_last, base, 2.0 * beta)?;
    let prof = crate::minimal_profile::scale_profile(base, k_fit)?;
    let tau0 = p.tau_of(-c.t0);
    let barriers = crate::minimal_profile::barrier_pair(&prof, beta, tau0).ok();
    let mut rows = Vec::with_capacity(tr.snapshots.len());
    for st in &tr.snapshots {
        let mt = -st.t;
        let v2 = to_type2(st, p, beta)?;
        let cf = curvature(st, p, beta)?;
        let (at, ht) = cf.sup(Region::Tip);
        let (ai, hi) = cf.sup(Region::Intermediate);
        let (ao, ho) = cf.sup(Region::Outer);
        let cone = to_type1(st, p, c.rho, beta)
            .ok()
            .and_then(|v| cone_distance(&v, 0.5, 1.0).ok())
            .map(|d| d.0)
            .unwrap_or(f64::NAN);
        let (lm, um) = match &barriers {
            Some((lo, up)) => verify_barrier(&v2, lo, up, p)
                .map(|r| (r.lower_margin, r.upper_margin))
                .unwrap_or((f64::NAN, f64::NAN)),
            None => (f64::NAN, f64::NAN),
        };
        rows.push(SeriesRow {
            minus_t: mt,
            tau: v2.tau,
            sup_a_tip: at,
            sup_a_intermediate: ai,
            sup_a_outer: ao,
            sup_h_tip: ht,
            sup_h_intermediate: hi,
            sup_h_outer: ho,
            h_axis: cf.h[0],
            profile_distance: profile_distance(&v2, &prof, beta).0,
            cone_distance: cone,
            convexity_min: convexity_report(&v2, 5.0 * beta).0,
            lower_margin: lm,
            upper_margin: um,
        });
    }
    let pairs = |f: &dyn Fn(&SeriesRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter()
            .map(|r| (r.minus_t, f(r)))
            .filter(|(_, q)| q.is_finite())
            .collect()
    };
    let rate_a_tip = fit_rate_late(&pairs(&|r| r.sup_a_tip)).ok();
    let rate_h_axis = fit_rate_late(&pairs(&|r| r.h_axis.abs())).ok();
    let rate_cone = fit_rate_late(&pairs(&|r| r.cone_distance)).ok();
    let pt = post_transient(rows.len());
    let ratio = |r: &SeriesRow| r.sup_h_tip / r.sup_a_tip;
    let ratio_h_over_a = (ratio(&rows[pt.start.min(rows.len() - 1)]), ratio(rows.last().unwrap()));
    let mut lhopital = Vec::new();
    let tail = tr.snapshots.len().saturating_sub(5);
    for z in [0.0, 1.0] {
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for st in &tr.snapshots[tail..] {
            let mt = -st.t;
            let v2 = to_type2(st, p, beta)?;
            let dl = -(0.5 + p.sigma) * mt.powf(-0.5 + p.sigma);
            acc += v2.velocity_at(z) / dl;
            cnt += 1.0;
        }
        lhopital.push((z, acc / cnt, prof.support_function(z)));
    }
    Ok(Diagnostics {
        k_fit,
        rows,
        rate_a_tip,
        rate_h_axis,
        rate_cone,
        ratio_h_over_a,
        lhopital,
    })
}
