//! The rotationally symmetric minimal hypersurface asymptotic to Simons' cone.
//!
//! In radial coordinates the profile `r -> psi_hat(r)` solves
//!
//! ```text
//! psi_hat'' / (1 + psi_hat'^2) + (n-1) (psi_hat'/r - 1/psi_hat) = 0,
//! psi_hat'(0) = 0,   (psi_hat(r) - r) / r^alpha -> 2^((alpha+1)/2).
//! ```
//!
//! Near the axis the equation is integrated in `r`; once the curve is a graph
//! over the diagonal it is continued in the rotated frame `z = (r + psi_hat)/sqrt 2`,
//! `psi = (psi_hat - r)/sqrt 2`, with `ln z` as the independent variable, which
//! keeps the small offset from the cone free of cancellation.
//!
//! The scaling family is `psi_hat_k(r) = k^(1/(1-alpha)) psi_hat(k^(-1/(1-alpha)) r)`.

use std::collections::HashMap;
use std::f64::consts::SQRT_2;
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use crate::error::{numeric, precondition, Result};
use crate::numerics::fd::fornberg;
use crate::numerics::fit::{power_fit, LineFit};
use crate::numerics::interp::{quintic_hermite, segment};
use crate::numerics::ode::{integrate, Tolerance};
use crate::parameters::Parameters;

/// Nodes of the axis segment `[0, 2 psi_hat(0)]`.
const AXIS_NODES: usize = 400;
/// Nodes per decade of the diagonal coordinate in the cone segment.
const NODES_PER_DECADE: f64 = 200.0;

/// Canonical (`k = 1`) profile data shared by every scaled copy.
#[derive(Debug)]
struct Canonical {
    alpha: f64,
    r: Vec<f64>,
    /// `psi_hat - r`, `psi_hat' - 1`, `psi_hat''` on `r`.
    q: Vec<f64>,
    dq: Vec<f64>,
    ddq: Vec<f64>,
    /// Rotated nodes and the cone graph on them.
    z: Vec<f64>,
    psi: Vec<f64>,
    dpsi: Vec<f64>,
    ddpsi: Vec<f64>,
}

impl Canonical {
    fn offset(&self, r: f64) -> (f64, f64, f64) {
        let last = self.r.len() - 1;
        if r <= self.r[last] {
            return quintic_hermite(&self.r, &self.q, &self.dq, &self.ddq, r.max(0.0));
        }
        // Beyond the grid: follow the cone graph's algebraic tail.
        let z = self.z_of_r(r);
        let (p, dp, ddp) = self.cone(z);
        // psi_hat' = (1+P)/(1-P) and psi_hat'' = psi''(1+psi_hat')^3/(2 sqrt 2).
        let ph1 = (1.0 + dp) / (1.0 - dp);
        let ph2 = ddp * (1.0 + ph1).powi(3) / (2.0 * SQRT_2);
        (SQRT_2 * p, 2.0 * dp / (1.0 - dp), ph2)
    }

    fn cone(&self, z: f64) -> (f64, f64, f64) {
        let last = self.z.len() - 1;
        if z <= self.z[last] {
            return quintic_hermite(&self.z, &self.psi, &self.dpsi, &self.ddpsi, z.max(self.z[0]));
        }
        let a = self.alpha;
        let c = self.psi[last] / self.z[last].powf(a);
        (
            c * z.powf(a),
            c * a * z.powf(a - 1.0),
            c * a * (a - 1.0) * z.powf(a - 2.0),
        )
    }

    /// Diagonal coordinate of the curve point with radial coordinate `r`.
    fn z_of_r(&self, r: f64) -> f64 {
        let mut z = SQRT_2 * r;
        for _ in 0..60 {
            let (p, dp, _) = self.cone(z);
            let g = (z - p) / SQRT_2 - r;
            let step = g * SQRT_2 / (1.0 - dp);
            z -= step;
            if step.abs() <= 1e-15 * z {
                break;
            }
        }
        z
    }
}

/// The profile `psi_hat_k` on a radial grid.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileSolution {
    pub params: Parameters,
    pub k: f64,
    pub r: Vec<f64>,
    pub psi_hat: Vec<f64>,
    pub dpsi_hat: Vec<f64>,
    pub ddpsi_hat: Vec<f64>,
    /// Tail limit of `(psi_hat_k - r)/r^alpha`, extrapolated.
    pub asym_coeff: f64,
    #[serde(skip)]
    canon: Arc<Canonical>,
    /// Length scale `k^(1/(1-alpha))`.
    #[serde(skip)]
    scale: f64,
}

/// Measured tail limit of `q(R)/R^alpha` with one Richardson step between
/// `R/2` and `R`, the leading correction decaying like `R^(alpha-1)`.
fn tail_coefficient(c: &Canonical, r_end: f64) -> f64 {
    let a = c.alpha;
    let f = |r: f64| c.offset(r).0 / r.powf(a);
    let q = a - 1.0;
    let f1 = f(r_end);
    let f2 = f(0.5 * r_end);
    let w = 0.5f64.powf(q);
    (w * f1 - f2) / (w - 1.0)
}

fn radial_rhs(n: f64) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] {
    move |r, y| {
        let d = y[1];
        [d, (1.0 + d * d) * (n - 1.0) * (1.0 / y[0] - d / r)]
    }
}

/// `h = ln z`; state `(psi, dpsi/dz)`.
fn cone_rhs(n: f64) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] {
    move |h, y| {
        let z = h.exp();
        let (p, dp) = (y[0], y[1]);
        let qz = p / z;
        [z * dp, -2.0 * (n - 1.0) * (1.0 + dp * dp) * (dp + qz) / (1.0 - qz * qz)]
    }
}

/// Integrate from the axis with `psi_hat(0) = p` out to `z_end`.
fn integrate_profile(n: f64, alpha: f64, p: f64, z_end: f64, rtol: f64) -> Result<Canonical> {
    let a2 = (n - 1.0) / (2.0 * n * p);
    let b4 = (8.0 * a2.powi(3) - (n - 1.0) * a2 / (p * p)) / (4.0 * (n + 2.0));
    let series = |r: f64| {
        let r2 = r * r;
        [p + a2 * r2 + b4 * r2 * r2, 2.0 * a2 * r + 4.0 * b4 * r * r2]
    };
    let tol = Tolerance::relative(rtol);
    let rhs = radial_rhs(n);
    let r_s = 2.0 * p;
    let r_series = 1e-3 * p;

    let mut r = Vec::new();
    let mut q = Vec::new();
    let mut dq = Vec::new();
    let mut ddq = Vec::new();
    let push_radial =
        |r: &mut Vec<f64>, q: &mut Vec<f64>, dq: &mut Vec<f64>, ddq: &mut Vec<f64>, x: f64, y: [f64; 2]| {
            let dd = if x == 0.0 {
                (n - 1.0) / (n * p)
            } else {
                (1.0 + y[1] * y[1]) * (n - 1.0) * (1.0 / y[0] - y[1] / x)
            };
            r.push(x);
            q.push(y[0] - x);
            dq.push(y[1] - 1.0);
            ddq.push(dd);
        };
    push_radial(&mut r, &mut q, &mut dq, &mut ddq, 0.0, [p, 0.0]);
    let mut x = r_series;
    let mut y = series(r_series);
    let mut h = 1e-3 * p;
    for j in 1..=AXIS_NODES {
        let target = r_s * j as f64 / AXIS_NODES as f64;
        y = integrate(&rhs, x, y, target, tol, &mut h).map_err(crate::Error::Numeric)?;
        x = target;
        if !(y[0] > 0.0 && y[0].is_finite()) {
            return numeric(format!("radial profile lost positivity at r = {x}"));
        }
        push_radial(&mut r, &mut q, &mut dq, &mut ddq, x, y);
    }

    // Switch to the rotated frame.
    let z_s = (x + y[0]) / SQRT_2;
    let mut cy = [(y[0] - x) / SQRT_2, (y[1] - 1.0) / (y[1] + 1.0)];
    let crhs = cone_rhs(n);
    let h_s = z_s.ln();
    let h_end = z_end.ln();
    let dh = std::f64::consts::LN_10 / NODES_PER_DECADE;
    let steps = ((h_end - h_s) / dh).ceil().max(1.0) as usize;
    let mut hh = h_s;
    let mut hstep = 1e-3;
    let mut cone_nodes: Vec<(f64, [f64; 2])> = Vec::with_capacity(steps);
    for j in 1..=steps {
        let target = h_s + (h_end - h_s) * j as f64 / steps as f64;
        cy = integrate(&crhs, hh, cy, target, tol, &mut hstep).map_err(crate::Error::Numeric)?;
        hh = target;
        if !(cy[0] > 0.0 && cy[1] < 0.0 && cy[1] > -1.0) {
            return numeric(format!("cone graph degenerate at z = {}", target.exp()));
        }
        cone_nodes.push((target.exp(), cy));
    }

    // Cone-graph values on the radial axis segment, by rotation.
    let mut z = Vec::with_capacity(r.len() + cone_nodes.len());
    let mut psi = Vec::with_capacity(z.capacity());
    let mut dpsi = Vec::with_capacity(z.capacity());
    let mut ddpsi = Vec::with_capacity(z.capacity());
    for j in 0..r.len() {
        let ph = r[j] + q[j];
        let d1 = dq[j] + 1.0;
        z.push((r[j] + ph) / SQRT_2);
        psi.push(q[j] / SQRT_2);
        dpsi.push(dq[j] / (d1 + 1.0));
        ddpsi.push(2.0 * SQRT_2 * ddq[j] / (1.0 + d1).powi(3));
    }
    for (zz, s) in cone_nodes {
        let p_ = s[0];
        let dp = s[1];
        let qz = p_ / zz;
        let dpdh = -2.0 * (n - 1.0) * (1.0 + dp * dp) * (dp + qz) / (1.0 - qz * qz);
        let dd = dpdh / zz;
        z.push(zz);
        psi.push(p_);
        dpsi.push(dp);
        ddpsi.push(dd);
        let rr = (zz - p_) / SQRT_2;
        let ph1 = (1.0 + dp) / (1.0 - dp);
        r.push(rr);
        q.push(SQRT_2 * p_);
        dq.push(2.0 * dp / (1.0 - dp));
        ddq.push(dd * (1.0 + ph1).powi(3) / (2.0 * SQRT_2));
    }
    Ok(Canonical {
        alpha,
        r,
        q,
        dq,
        ddq,
        z,
        psi,
        dpsi,
        ddpsi,
    })
}

/// Solve for the canonical `k = 1` profile out to radius `r_max`.
///
/// The axis value `psi_hat(0)` is found by shooting on the tail coefficient.
/// Along the one-parameter family of regular solutions the coefficient scales
/// like `psi_hat(0)^(1-alpha)`, so each shooting update is a power-law
/// correction; iteration stops when the measured coefficient matches to 1e-12.
pub fn solve_profile(params: &Parameters, r_max: f64, tol: f64) -> Result<ProfileSolution> {
    if !(r_max >= 50.0) {
        return precondition(format!("r_max must be at least 50, got {r_max}"));
    }
    if !(tol > 0.0 && tol <= 1e-4) {
        return precondition(format!("tol must lie in (0, 1e-4], got {tol}"));
    }
    let n = params.nf();
    let alpha = params.alpha;
    let target = params.asymptote();
    let rtol = tol / 10.0;
    let mut p: f64 = 1.0;
    let mut bracket = (f64::NAN, f64::NAN);
    for _ in 0..8 {
        let z_end = SQRT_2 * r_max / p.min(1.0) + 1.0;
        let c = integrate_profile(n, alpha, p, z_end, rtol)?;
        let r_end = (*c.r.last().unwrap()).min(r_max / p.min(1.0));
        let a = tail_coefficient(&c, r_end);
        if !(a > 0.0 && a.is_finite()) {
            return numeric(format!(
                "shooting failed: tail coefficient {a} at psi_hat(0) = {p}; last bracket {bracket:?}"
            ));
        }
        bracket = (p, a);
        let ratio = target / a;
        if (ratio - 1.0).abs() < 1e-12 {
            let c = integrate_profile(n, alpha, p, SQRT_2 * r_max + 1.0, rtol)?;
            let asym = tail_coefficient(&c, r_max.min(*c.r.last().unwrap()));
            return Ok(ProfileSolution::from_canonical(params.clone(), Arc::new(c), 1.0, asym));
        }
        p *= ratio.powf(1.0 / (1.0 - alpha));
    }
    numeric(format!(
        "shooting did not converge; last (psi_hat(0), coefficient) = {bracket:?}"
    ))
}

/// Radius and tolerance of the shared canonical profile.
pub const CANONICAL_R_MAX: f64 = 1000.0;
pub const CANONICAL_TOL: f64 = 1e-10;

/// The canonical profile for `params.n`, solved once per process and shared.
pub fn canonical_profile(params: &Parameters) -> Result<ProfileSolution> {
    static CACHE: OnceLock<Mutex<HashMap<u32, ProfileSolution>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().unwrap().get(&params.n) {
        if p.params == *params {
            return Ok(p.clone());
        }
    }
    let p = solve_profile(params, CANONICAL_R_MAX, CANONICAL_TOL)?;
    cache.lock().unwrap().insert(params.n, p.clone());
    Ok(p)
}

impl ProfileSolution {
    fn from_canonical(params: Parameters, canon: Arc<Canonical>, k: f64, asym_unit: f64) -> Self {
        let s = k.powf(1.0 / (1.0 - params.alpha));
        let (r, psi_hat, dpsi_hat, ddpsi_hat) = if k == 1.0 {
            let r = canon.r.clone();
            let ph: Vec<f64> = r.iter().zip(&canon.q).map(|(r, q)| r + q).collect();
            let d: Vec<f64> = canon.dq.iter().map(|v| v + 1.0).collect();
            (r, ph, d, canon.ddq.clone())
        } else {
            let r: Vec<f64> = canon.r.iter().map(|v| s * v).collect();
            let ph: Vec<f64> = canon.r.iter().zip(&canon.q).map(|(r, q)| s * (r + q)).collect();
            let d: Vec<f64> = canon.dq.iter().map(|v| v + 1.0).collect();
            let dd: Vec<f64> = canon.ddq.iter().map(|v| v / s).collect();
            (r, ph, d, dd)
        };
        Self {
            params,
            k,
            r,
            psi_hat,
            dpsi_hat,
            ddpsi_hat,
            asym_coeff: k * asym_unit,
            canon,
            scale: s,
        }
    }

    /// Length scale `k^(1/(1-alpha))` relative to the canonical profile.
    pub fn length_scale(&self) -> f64 {
        self.scale
    }

    /// `psi_hat_k(0)`.
    pub fn psi0(&self) -> f64 {
        self.scale * self.canon.q[0]
    }

    /// `(psi_hat_k, psi_hat_k', psi_hat_k'')` at any `r >= 0`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        let (q, dq, ddq) = self.offset(r);
        (r + q, 1.0 + dq, ddq)
    }

    /// `(psi_hat_k - r, psi_hat_k' - 1, psi_hat_k'')` at any `r >= 0`.
    pub fn offset(&self, r: f64) -> (f64, f64, f64) {
        let s = self.scale;
        let (q, dq, ddq) = self.canon.offset(r / s);
        (s * q, dq, ddq / s)
    }

    /// `psi_hat_k(r) - r psi_hat_k'(r)`, evaluated without cancellation.
    pub fn support_function(&self, r: f64) -> f64 {
        let (q, dq, _) = self.offset(r);
        q - r * dq
    }

    /// Maximum residual of the profile equation over interior nodes, with the
    /// second derivative taken by a 7-point finite difference of `psi_hat'`.
    pub fn ode_residual(&self) -> f64 {
        let n = self.params.nf();
        let m = self.r.len();
        let mut worst: f64 = 0.0;
        for j in 1..m - 1 {
            let lo = j.saturating_sub(3).min(m - 7);
            let xs = &self.r[lo..lo + 7];
            let w = fornberg(self.r[j], xs, 1);
            let dd: f64 = (0..7).map(|i| w[1][i] * self.dpsi_hat[lo + i]).sum();
            let d = self.dpsi_hat[j];
            let res = dd / (1.0 + d * d) + (n - 1.0) * (d / self.r[j] - 1.0 / self.psi_hat[j]);
            worst = worst.max(res.abs());
        }
        worst
    }

    /// Largest radius covered by the stored grid.
    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }
}

/// The profile rescaled to `k`: `psi_hat_k(r) = k^(1/(1-alpha)) psi_hat(k^(-1/(1-alpha)) r)`.
///
/// Values are exact images of the base grid (no interpolation), so `k = 1`
/// reproduces the base arrays bit for bit.
pub fn scale_profile(base: &ProfileSolution, k: f64) -> Result<ProfileSolution> {
    if !(k > 0.0 && k.is_finite()) {
        return precondition(format!("scale k must be positive, got {k}"));
    }
    if k == 1.0 {
        return Ok(base.clone());
    }
    let asym_unit = base.asym_coeff / base.k;
    Ok(ProfileSolution::from_canonical(
        base.params.clone(),
        base.canon.clone(),
        base.k * k,
        asym_unit,
    ))
}

/// The profile as a graph `psi_k(z)` over the diagonal.
#[derive(Debug, Clone, Serialize)]
pub struct ConeGraph {
    pub params: Parameters,
    pub k: f64,
    pub z: Vec<f64>,
    pub psi: Vec<f64>,
    pub dpsi: Vec<f64>,
    pub ddpsi: Vec<f64>,
    #[serde(skip)]
    canon: Arc<Canonical>,
    #[serde(skip)]
    scale: f64,
}

/// Rotate the profile by 45 degrees onto the diagonal.
pub fn to_cone_graph(profile: &ProfileSolution) -> Result<ConeGraph> {
    let s = profile.scale;
    let c = &profile.canon;
    if c.z.windows(2).any(|w| !(w[1] > w[0])) {
        return numeric("rotated coordinate is not monotone");
    }
    Ok(ConeGraph {
        params: profile.params.clone(),
        k: profile.k,
        z: c.z.iter().map(|v| s * v).collect(),
        psi: c.psi.iter().map(|v| s * v).collect(),
        dpsi: c.dpsi.clone(),
        ddpsi: c.ddpsi.iter().map(|v| v / s).collect(),
        canon: c.clone(),
        scale: s,
    })
}

impl ConeGraph {
    /// Left endpoint `psi_hat_k(0)/sqrt 2`.
    pub fn z0(&self) -> f64 {
        self.z[0]
    }

    /// `(psi_k, psi_k', psi_k'')` at `z >= z0`.
    pub fn eval(&self, z: f64) -> (f64, f64, f64) {
        let s = self.scale;
        let (p, d, dd) = self.canon.cone(z / s);
        (s * p, d, dd / s)
    }

    /// Radial coordinate of the curve point above diagonal coordinate `z`.
    pub fn radial_of(&self, z: f64) -> f64 {
        (z - self.eval(z).0) / SQRT_2
    }
}

/// A profile perturbed by time-dependent scale parameters:
/// `psi_hat_k^{lambda,mu}(z, tau) = psi_hat_{lambda k}(z / mu)`.
pub struct BarrierProfile {
    pub base: ProfileSolution,
    /// `tau -> (lambda, d lambda / d tau)`.
    pub lambda_fn: Box<dyn Fn(f64) -> (f64, f64) + Send + Sync>,
    /// `tau -> (mu, d mu / d tau)`.
    pub mu_fn: Box<dyn Fn(f64) -> (f64, f64) + Send + Sync>,
}

impl std::fmt::Debug for BarrierProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BarrierProfile").field("k", &self.base.k).finish()
    }
}

/// Wrap `base` with scale functions; rejects non-positive values on `taus`.
pub fn perturb_profile(
    base: &ProfileSolution,
    lambda_fn: Box<dyn Fn(f64) -> (f64, f64) + Send + Sync>,
    mu_fn: Box<dyn Fn(f64) -> (f64, f64) + Send + Sync>,
    taus: &[f64],
) -> Result<BarrierProfile> {
    for &t in taus {
        let (l, _) = lambda_fn(t);
        let (m, _) = mu_fn(t);
        if !(l > 0.0 && m > 0.0) {
            return precondition(format!(
                "barrier scales must be positive at tau = {t}: lambda {l}, mu {m}"
            ));
        }
    }
    Ok(BarrierProfile {
        base: base.clone(),
        lambda_fn,
        mu_fn,
    })
}

impl BarrierProfile {
    fn frame(&self, z: f64, tau: f64) -> (f64, f64, f64, f64, f64, f64) {
        let e = self.base.params.scale_exponent();
        let (l, dl) = (self.lambda_fn)(tau);
        let (m, dm) = (self.mu_fn)(tau);
        let ls = l.powf(e);
        (l, dl, m, dm, ls, z / (ls * m))
    }

    /// Barrier value and its `z` derivatives.
    pub fn eval(&self, z: f64, tau: f64) -> (f64, f64, f64) {
        let (_, _, m, _, ls, r) = self.frame(z, tau);
        let (p, d, dd) = self.base.eval(r);
        (ls * p, d / m, dd / (ls * m * m))
    }

    /// `(d/d lambda, d/d mu)` of the barrier at fixed `z`.
    pub fn scale_derivatives(&self, z: f64, tau: f64) -> (f64, f64) {
        let a = self.base.params.alpha;
        let (l, _, m, _, ls, r) = self.frame(z, tau);
        let (_, d, _) = self.base.eval(r);
        let dlam = l.powf(a / (1.0 - a)) / (1.0 - a) * self.base.support_function(r);
        let dmu = -ls / m * r * d;
        (dlam, dmu)
    }

    /// `d_tau b - [b''/(1+b'^2) + (n-1)(b'/z - 1/b) + (1/2+sigma)/(2 sigma tau)(b - z b')]`
    /// in the closed form obtained by substituting the scaling law.
    pub fn residual(&self, z: f64, tau: f64) -> f64 {
        let p = &self.base.params;
        let a = p.alpha;
        let n = p.nf();
        let eps = (0.5 + p.sigma) / (2.0 * p.sigma * tau);
        let (l, dl, m, dmu, ls, r) = self.frame(z, tau);
        let (_, d, dd) = self.base.eval(r);
        let supp = self.base.support_function(r);
        let rad = if r == 0.0 { dd } else { d / r };
        (-eps * ls + l.powf(a / (1.0 - a)) / (1.0 - a) * dl) * supp - ls / m * dmu * r * d
            + (m * m - 1.0) / (ls * m * m) * (dd / ((1.0 + d * d) * (1.0 + (d / m).powi(2))) + (n - 1.0) * rad)
    }

    /// The same quantity evaluated directly from the barrier's derivatives,
    /// with the time derivative assembled by the chain rule.
    pub fn residual_direct(&self, z: f64, tau: f64) -> f64 {
        let p = &self.base.params;
        let n = p.nf();
        let eps = (0.5 + p.sigma) / (2.0 * p.sigma * tau);
        let (_, dl, _, dmu, _, _) = self.frame(z, tau);
        let (dlam, dmu_d) = self.scale_derivatives(z, tau);
        let (b, b1, b2) = self.eval(z, tau);
        let rad = if z == 0.0 { b2 } else { b1 / z };
        let dt = dlam * dl + dmu_d * dmu;
        dt - (b2 / (1.0 + b1 * b1) + (n - 1.0) * (rad - 1.0 / b) + eps * (b - z * b1))
    }
}

/// The barrier pair: `lambda = 1 -/+ beta^(alpha-3) (tau/tau0)^(-varrho)`,
/// `mu_- = 1`, `mu_+ = 1 + delta beta^(alpha-3) (2 sigma tau)^(varrho-1) (tau/tau0)^(-varrho)`.
pub fn barrier_pair(base: &ProfileSolution, beta: f64, tau0: f64) -> Result<(BarrierProfile, BarrierProfile)> {
    let p = &base.params;
    let Some(varrho) = p.varrho else {
        return precondition("barriers need an admissible varrho (n >= 5)");
    };
    let sigma = p.sigma;
    let amp = beta.powf(p.alpha - 3.0);
    let delta = barrier_delta(base, beta);
    let lower = perturb_profile(
        base,
        Box::new(move |t: f64| {
            let d = amp * (t / tau0).powf(-varrho);
            (1.0 - d, varrho * d / t)
        }),
        Box::new(|_t| (1.0, 0.0)),
        &[tau0],
    )?;
    let upper = perturb_profile(
        base,
        Box::new(move |t: f64| {
            let d = amp * (t / tau0).powf(-varrho);
            (1.0 + d, -varrho * d / t)
        }),
        Box::new(move |t: f64| {
            let g = delta * amp * (2.0 * sigma * t).powf(varrho - 1.0) * (t / tau0).powf(-varrho);
            // d/dtau of t^(varrho-1) t^(-varrho) = -1/t
            (1.0 + g, -g / t)
        }),
        &[tau0],
    )?;
    Ok((lower, upper))
}

/// `delta = inf_{0 < r <= 3 beta/2} (psi_hat_k - r psi_hat_k') / (r psi_hat_k') / (4 (1 - alpha))`.
pub fn barrier_delta(base: &ProfileSolution, beta: f64) -> f64 {
    let a = base.params.alpha;
    let r_hi = 1.5 * beta;
    let mut inf = f64::INFINITY;
    for j in 1..=2000 {
        let r = r_hi * j as f64 / 2000.0;
        let (_, d, _) = base.eval(r);
        let v = base.support_function(r) / (r * d);
        inf = inf.min(v);
    }
    inf / (4.0 * (1.0 - a))
}

/// One row of a derivative decay table.
#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    /// `"cone"` for `psi_k`, `"radial"` for `psi_hat_k`.
    pub curve: &'static str,
    pub order: usize,
    pub exponent: f64,
    pub expected: f64,
    pub rms: f64,
    /// Whether the fit window spanned less than a decade.
    pub partial: bool,
}

/// Tail exponents of `|d^m psi_k|` (m = 0..=m_max) and `|d^m psi_hat_k|`
/// (m = 2..=m_max), fitted on `[10 L, z_end / 2]` with `L` the length scale.
pub fn decay_report(profile: &ProfileSolution, m_max: usize) -> Result<Vec<DecayRow>> {
    if m_max > 4 {
        return precondition(format!("m_max must be at most 4, got {m_max}"));
    }
    let cone = to_cone_graph(profile)?;
    let a = profile.params.alpha;
    let lo = 10.0 * profile.scale;
    let hi = 0.5 * cone.z.last().unwrap();
    let partial = hi < 10.0 * lo;
    let idx: Vec<usize> = (0..cone.z.len())
        .filter(|&j| cone.z[j] >= lo && cone.z[j] <= hi)
        .collect();
    let mut rows = Vec::new();
    let third = |xs: &[f64], ys: &[f64], j: usize, order: usize| -> f64 {
        let m = xs.len();
        let lo = j.saturating_sub(3).min(m - 7);
        let w = fornberg(xs[j], &xs[lo..lo + 7], order);
        (0..7).map(|i| w[order][i] * ys[lo + i]).sum()
    };
    let mut push = |curve: &'static str, order: usize, xs: Vec<f64>, ys: Vec<f64>| -> Result<()> {
        let ys_abs: Vec<f64> = ys.iter().map(|v| v.abs()).collect();
        let fit: LineFit = power_fit(&xs, &ys_abs)
            .ok_or_else(|| crate::Error::Numeric(format!("decay fit failed for {curve} order {order}")))?;
        rows.push(DecayRow {
            curve,
            order,
            exponent: fit.slope,
            expected: a - order as f64,
            rms: fit.rms,
            partial,
        });
        Ok(())
    };
    let zs: Vec<f64> = idx.iter().map(|&j| cone.z[j]).collect();
    for m in 0..=m_max {
        let ys: Vec<f64> = idx
            .iter()
            .map(|&j| match m {
                0 => cone.psi[j],
                1 => cone.dpsi[j],
                2 => cone.ddpsi[j],
                _ => third(&cone.z, &cone.ddpsi, j, m - 2),
            })
            .collect();
        push("cone", m, zs.clone(), ys)?;
    }
    let ridx: Vec<usize> = (0..profile.r.len())
        .filter(|&j| profile.r[j] >= lo && profile.r[j] <= hi / SQRT_2)
        .collect();
    let rs: Vec<f64> = ridx.iter().map(|&j| profile.r[j]).collect();
    for m in 2..=m_max {
        let ys: Vec<f64> = ridx
            .iter()
            .map(|&j| {
                if m == 2 {
                    profile.ddpsi_hat[j]
                } else {
                    third(&profile.r, &profile.ddpsi_hat, j, m - 2)
                }
            })
            .collect();
        push("radial", m, rs.clone(), ys)?;
    }
    Ok(rows)
}

/// Least-squares tail exponent of `|psi_k(z) - k z^alpha|` over `[z_lo, z_hi]`.
pub fn cone_correction_exponent(cone: &ConeGraph, z_lo: f64, z_hi: f64) -> Option<LineFit> {
    let a = cone.params.alpha;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for j in 0..cone.z.len() {
        let z = cone.z[j];
        if z >= z_lo && z <= z_hi {
            xs.push(z);
            ys.push((cone.psi[j] - cone.k * z.powf(a)).abs());
        }
    }
    power_fit(&xs, &ys)
}

/// Index of the stored radial node at or below `r`.
pub fn node_below(profile: &ProfileSolution, r: f64) -> usize {
    segment(&profile.r, r)
}
