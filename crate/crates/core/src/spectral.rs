//! The linearised operator of the type I rescaled flow and its eigenbasis.
//!
//! ```text
//! L f = -( f'' + 2(n-1)(y f' + f)/y^2 + (f - y f')/2 ),
//! ```
//!
//! self-adjoint in `L^2(y^{2(n-1)} e^{-y^2/4} dy)`, with eigenvalues
//! `lambda_i = -(1-alpha)/2 + i` and eigenfunctions
//! `phi_i = c_i y^alpha M(-i, n+alpha-1/2; y^2/4)`.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{precondition, Result};
use crate::numerics::fd::fornberg;
use crate::numerics::interp::lagrange;
use crate::numerics::quad::GaussLegendre;
use crate::parameters::Parameters;
use crate::rescaling_diagnostics::TypeIView;

/// Terminating Kummer series `M(a, b; xi)` for `a` a non-positive integer.
pub fn kummer_m(a: f64, b: f64, xi: f64) -> Result<f64> {
    Ok(kummer_m_derivs(a, b, xi)?.0)
}

/// `(M, dM/dxi, d^2M/dxi^2)` of the terminating series.
pub fn kummer_m_derivs(a: f64, b: f64, xi: f64) -> Result<(f64, f64, f64)> {
    if b <= 0.0 && b.fract() == 0.0 {
        return precondition(format!("Kummer b must not be a non-positive integer, got {b}"));
    }
    if !(a <= 0.0 && a.fract() == 0.0) {
        return precondition(format!("only terminating series are supported, got a = {a}"));
    }
    let deg = (-a) as usize;
    // Coefficients of the polynomial in xi.
    let mut coef = Vec::with_capacity(deg + 1);
    let mut c = 1.0;
    coef.push(c);
    for j in 0..deg {
        let jf = j as f64;
        c *= (a + jf) / ((b + jf) * (jf + 1.0));
        coef.push(c);
    }
    let (mut m, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for j in (0..=deg).rev() {
        let jf = j as f64;
        m = m * xi + coef[j];
        if j >= 1 {
            d1 = d1 * xi + jf * coef[j];
        }
        if j >= 2 {
            d2 = d2 * xi + jf * (jf - 1.0) * coef[j];
        }
    }
    Ok((m, d1, d2))
}

/// Composite Gauss-Legendre rule for the Gaussian-weighted inner product.
#[derive(Debug, Clone, Serialize)]
pub struct QuadSpec {
    pub y_max: f64,
    pub panel_width: f64,
    pub nodes_per_panel: usize,
    /// Upper bound on the relative mass of the weight beyond `y_max`,
    /// counting polynomial growth of the highest eigenfunction.
    pub tail_bound: f64,
}

/// Nodes and weights; `w` already contains `y^{2(n-1)} e^{-y^2/4}`.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

/// The orthonormal eigenbasis `phi_0..phi_m`.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralBasis {
    pub params: Parameters,
    pub c: Vec<f64>,
    pub quad_spec: QuadSpec,
    #[serde(skip)]
    pub quad: Quadrature,
}

/// Truncation radius beyond which `y^p e^{-y^2/4}` has dropped below `1e-18`
/// of its peak, with `p` the power of the heaviest integrand.
fn truncation_radius(p: f64) -> f64 {
    let log_f = |y: f64| p * y.ln() - y * y / 4.0;
    let peak = if p > 0.0 { log_f((2.0 * p).sqrt()) } else { 0.0 };
    let mut y = (2.0 * p.max(1.0)).sqrt();
    while log_f(y) - peak > (1e-18f64).ln() {
        y += 0.25;
    }
    y
}

fn build_quadrature(n: f64, spec: &QuadSpec) -> Quadrature {
    let gl = GaussLegendre::new(spec.nodes_per_panel);
    let panels = (spec.y_max / spec.panel_width).ceil() as usize;
    let h = spec.y_max / panels as f64;
    let mut y = Vec::new();
    let mut w = Vec::new();
    for k in 0..panels {
        gl.push_mapped(k as f64 * h, (k + 1) as f64 * h, &mut y, &mut w);
    }
    for (yy, ww) in y.iter().zip(w.iter_mut()) {
        *ww *= gaussian_weight(n, *yy);
    }
    Quadrature { y, w }
}

/// `y^{2(n-1)} e^{-y^2/4}`.
pub fn gaussian_weight(n: f64, y: f64) -> f64 {
    y.powf(2.0 * (n - 1.0)) * (-0.25 * y * y).exp()
}

/// Rejects integrands behaving like `y^power` at the origin that are not
/// integrable against the weight.
pub fn check_integrable(params: &Parameters, power: f64) -> Result<()> {
    let total = power + 2.0 * (params.nf() - 1.0);
    if total <= -1.0 {
        return precondition(format!(
            "integrand ~ y^{total:.4} at the origin after weighting; exponent must exceed -1"
        ));
    }
    Ok(())
}

impl SpectralBasis {
    /// Basis with eigenfunctions up to `params.lambda.len() - 1`.
    pub fn new(params: &Parameters) -> Result<Self> {
        Self::with_panels(params, 0.25, 24)
    }

    /// Basis with an explicit panel width and Gauss order.
    pub fn with_panels(params: &Parameters, panel_width: f64, nodes_per_panel: usize) -> Result<Self> {
        let m = params.lambda.len() - 1;
        let n = params.nf();
        let a = params.alpha;
        check_integrable(params, 2.0 * a)?;
        let p = 2.0 * (n - 1.0) + 2.0 * a + 4.0 * m as f64;
        let y_max = truncation_radius(p);
        let spec = QuadSpec {
            y_max,
            panel_width,
            nodes_per_panel,
            tail_bound: 1e-18,
        };
        let quad = build_quadrature(n, &spec);
        let b = params.kummer_b();
        let mut c = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let mut s = 0.0;
            for (y, w) in quad.y.iter().zip(&quad.w) {
                let f = y.powf(a) * kummer_m(-(i as f64), b, y * y / 4.0)?;
                s += f * f * w;
            }
            c.push(1.0 / s.sqrt());
        }
        Ok(Self {
            params: params.clone(),
            c,
            quad_spec: spec,
            quad,
        })
    }

    pub fn m(&self) -> usize {
        self.c.len() - 1
    }

    /// `(phi_i, phi_i', phi_i'')` at `y > 0`.
    pub fn eigen_derivs(&self, i: usize, y: f64) -> (f64, f64, f64) {
        let a = self.params.alpha;
        let b = self.params.kummer_b();
        let (m, m1, m2) = kummer_m_derivs(-(i as f64), b, y * y / 4.0).expect("valid Kummer parameters");
        // d/dy M(y^2/4) = (y/2) M', d^2/dy^2 = M'/2 + (y^2/4) M''.
        let g = m;
        let g1 = 0.5 * y * m1;
        let g2 = 0.5 * m1 + 0.25 * y * y * m2;
        let p = y.powf(a);
        let p1 = a * y.powf(a - 1.0);
        let p2 = a * (a - 1.0) * y.powf(a - 2.0);
        let c = self.c[i];
        (c * p * g, c * (p1 * g + p * g1), c * (p2 * g + 2.0 * p1 * g1 + p * g2))
    }

    /// `(L f)(y)` from point values of `f, f', f''`.
    pub fn l_pointwise(&self, y: f64, f: f64, f1: f64, f2: f64) -> f64 {
        let n = self.params.nf();
        -(f2 + 2.0 * (n - 1.0) * (y * f1 + f) / (y * y) + (f - y * f1) / 2.0)
    }

    /// `phi_i` sampled on the quadrature nodes.
    pub fn sample(&self, i: usize) -> Vec<f64> {
        self.quad
            .y
            .iter()
            .map(|&y| eigenfunction(self, i, y).unwrap())
            .collect()
    }

    /// Gram matrix `<phi_i, phi_j>`.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let s: Vec<Vec<f64>> = (0..=self.m()).map(|i| self.sample(i)).collect();
        (0..=self.m())
            .map(|i| {
                (0..=self.m())
                    .map(|j| weighted_inner(&s[i], &s[j], &self.quad))
                    .collect()
            })
            .collect()
    }
}

/// `phi_i(y) = c_i y^alpha M(-i, n+alpha-1/2; y^2/4)`.
pub fn eigenfunction(basis: &SpectralBasis, i: usize, y: f64) -> Result<f64> {
    if i > basis.m() {
        return precondition(format!("eigenfunction index {i} exceeds m = {}", basis.m()));
    }
    if !(y > 0.0) {
        return precondition(format!("eigenfunctions are evaluated at y > 0, got {y}"));
    }
    let a = basis.params.alpha;
    let b = basis.params.kummer_b();
    Ok(basis.c[i] * y.powf(a) * kummer_m(-(i as f64), b, y * y / 4.0)?)
}

/// Quadrature of `int f g y^{2(n-1)} e^{-y^2/4} dy` from samples on `quad`.
pub fn weighted_inner(f: &[f64], g: &[f64], quad: &Quadrature) -> f64 {
    f.iter().zip(g).zip(&quad.w).map(|((a, b), w)| a * b * w).sum()
}

/// `L f` on the interior nodes of `ys`, from 7-point finite differences.
///
/// Returns the interior nodes and the values there. The local spacing must not
/// exceed `0.01 * max(y, 1)`.
pub fn apply_l(basis: &SpectralBasis, ys: &[f64], f: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if ys.len() != f.len() || ys.len() < 7 {
        return precondition("apply_L needs at least 7 matching samples");
    }
    for j in 1..ys.len() {
        let h = ys[j] - ys[j - 1];
        let need = 0.01 * ys[j - 1].max(1.0);
        if !(h > 0.0) || h > need || ys[0] <= 0.0 {
            return precondition(format!(
                "grid too coarse or not increasing at y = {}: spacing {h:e} exceeds required {need:e}",
                ys[j - 1]
            ));
        }
    }
    let mut out_y = Vec::with_capacity(ys.len() - 6);
    let mut out = Vec::with_capacity(ys.len() - 6);
    for j in 3..ys.len() - 3 {
        let w = fornberg(ys[j], &ys[j - 3..j + 4], 2);
        let d1: f64 = (0..7).map(|k| w[1][k] * f[j - 3 + k]).sum();
        let d2: f64 = (0..7).map(|k| w[2][k] * f[j - 3 + k]).sum();
        out_y.push(ys[j]);
        out.push(basis.l_pointwise(ys[j], f[j], d1, d2));
    }
    Ok((out_y, out))
}

/// Sup-norm eigen-residual `|L phi_i - lambda_i phi_i|_inf / |phi_i|_inf` on `[lo, hi]`.
pub fn eigen_residual(basis: &SpectralBasis, i: usize, lo: f64, hi: f64, h: f64) -> Result<f64> {
    let cnt = ((hi - lo) / h).round() as usize;
    let ys: Vec<f64> = (0..=cnt + 6).map(|j| lo + (j as f64 - 3.0) * h).collect();
    let f: Vec<f64> = ys.iter().map(|&y| eigenfunction(basis, i, y)).collect::<Result<_>>()?;
    let (yi, lf) = apply_l(basis, &ys, &f)?;
    let lam = basis.params.lambda[i];
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for (j, y) in yi.iter().enumerate() {
        let phi = f[j + 3];
        num = num.max((lf[j] - lam * phi).abs());
        den = den.max(phi.abs());
        debug_assert!((*y - ys[j + 3]).abs() == 0.0);
    }
    Ok(num / den)
}

/// The bump `exp(-1/(t(1-t)))` on `(0, 1)`.
fn bump(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        (-1.0 / (t * (1.0 - t))).exp()
    }
}

const ZETA_CELLS: usize = 2048;

/// Normalised cumulative integral of the bump on a uniform table.
fn zeta_table() -> &'static Vec<f64> {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let gl = GaussLegendre::new(12);
        let h = 1.0 / ZETA_CELLS as f64;
        let mut cum = vec![0.0; ZETA_CELLS + 1];
        for k in 0..ZETA_CELLS {
            let a = k as f64 * h;
            cum[k + 1] = cum[k] + gl.integrate(a, a + h, bump);
        }
        let total = cum[ZETA_CELLS];
        cum.iter().map(|v| v / total).collect()
    })
}

fn zeta_norm() -> f64 {
    static NORM: OnceLock<f64> = OnceLock::new();
    *NORM.get_or_init(|| {
        let gl = GaussLegendre::new(12);
        let h = 1.0 / ZETA_CELLS as f64;
        (0..ZETA_CELLS)
            .map(|k| gl.integrate(k as f64 * h, (k + 1) as f64 * h, bump))
            .sum()
    })
}

/// Smooth non-decreasing cutoff: `0` for `r <= 0`, `1` for `r >= 1`,
/// `zeta(r) = int_0^r bump / int_0^1 bump` in between.
pub fn cutoff_zeta(r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if r >= 1.0 {
        return 1.0;
    }
    let table = zeta_table();
    let h = 1.0 / ZETA_CELLS as f64;
    let k = ((r / h) as usize).min(ZETA_CELLS - 1);
    let a = k as f64 * h;
    // Exact tail integral over the partial cell.
    let gl = GaussLegendre::new(12);
    let v = table[k] + gl.integrate(a, r, bump) / zeta_norm();
    v.clamp(0.0, 1.0)
}

/// Derivative of [`cutoff_zeta`].
pub fn cutoff_zeta_prime(r: f64) -> f64 {
    bump(r) / zeta_norm()
}

/// Unstable-mode components of a type I snapshot.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct ProjectionResult {
    pub phi0: f64,
    pub phi1: f64,
    pub s: f64,
}

impl ProjectionResult {
    pub fn norm(&self) -> f64 {
        self.phi0.hypot(self.phi1)
    }
}

/// Sorted panel breakpoints on `[lo, hi]` containing every point of `marks`
/// inside the range, refined geometrically away from `lo`.
fn panel_breaks(marks: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut m: Vec<f64> = marks.iter().copied().filter(|v| *v >= lo && *v <= hi).collect();
    m.push(lo);
    m.push(hi);
    m.sort_by(|a, b| a.partial_cmp(b).unwrap());
    m.dedup();
    let mut b = vec![m[0]];
    for w in m.windows(2) {
        let mut y = w[0];
        while y < w[1] {
            let step = (0.25 * y).clamp(0.25 * (w[1] - w[0]).min(1e-3), 0.25);
            y = (y + step).min(w[1]);
            if w[1] - y < 1e-3 * step {
                y = w[1];
            }
            b.push(y);
        }
    }
    b
}

/// `Phi_i = <zeta(e^{sigma s} y - beta) zeta(rho e^{s/2} - y) v, c_i phi_i>` for `i = 0, 1`.
pub fn project_phi(basis: &SpectralBasis, view: &TypeIView, rho: f64, beta: f64) -> Result<ProjectionResult> {
    let out = project_modes(basis, view, rho, beta, 2)?;
    Ok(ProjectionResult {
        phi0: out[0],
        phi1: out[1],
        s: view.s,
    })
}

/// The cut-off projections `<zeta zeta v, c_i phi_i>` for `i < count`.
pub fn project_modes(basis: &SpectralBasis, view: &TypeIView, rho: f64, beta: f64, count: usize) -> Result<Vec<f64>> {
    if count > basis.m() + 1 {
        return precondition(format!("{count} modes requested but the basis has {}", basis.m() + 1));
    }
    let p = &basis.params;
    let s = view.s;
    let es = (p.sigma * s).exp();
    let lo = beta / es;
    let hi = rho * (0.5 * s).exp();
    let (y0, y1) = (view.y[0], *view.y.last().unwrap());
    let slack = 1e-12 * hi;
    if y0 > lo + slack || y1 < hi.min(basis.quad_spec.y_max) - slack {
        return precondition(format!(
            "snapshot covers [{y0}, {y1}] but the cutoff support is [{lo}, {hi}]"
        ));
    }
    let n = p.nf();
    let gl = GaussLegendre::new(16);
    let top = hi.min(basis.quad_spec.y_max);
    let breaks = panel_breaks(&[lo, lo + 1.0 / es, hi - 1.0, top], lo, top);
    let mut out = vec![0.0; count];
    for wd in breaks.windows(2) {
        if !(wd[1] > wd[0]) {
            continue;
        }
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        gl.push_mapped(wd[0], wd[1], &mut ys, &mut ws);
        for (y, w) in ys.into_iter().zip(ws) {
            let z = cutoff_zeta(es * y - beta) * cutoff_zeta(hi - y);
            if z == 0.0 {
                continue;
            }
            let v = lagrange(&view.y, &view.v, y, 6);
            let ww = w * gaussian_weight(n, y) * z * v;
            for (i, o) in out.iter_mut().enumerate() {
                *o += ww * basis.c[i] * eigenfunction(basis, i, y)?;
            }
        }
    }
    Ok(out)
}

/// `<zeta zeta phi_i, phi_j> - delta_ij`, computed as `-int (1 - zeta zeta) phi_i phi_j`
/// so that tiny deficits are not lost to cancellation. `eps = e^{-sigma s}`.
pub fn cutoff_deficit(basis: &SpectralBasis, i: usize, j: usize, eps: f64, rho: f64, beta: f64) -> Result<f64> {
    let p = &basis.params;
    let n = p.nf();
    let hi = rho * eps.powf(-1.0 / (2.0 * p.sigma));
    let gl = GaussLegendre::new(16);
    let deficit_on = |a: f64, b: f64| -> Result<f64> {
        let mut sum = 0.0;
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        gl.push_mapped(a, b, &mut ys, &mut ws);
        for (y, w) in ys.into_iter().zip(ws) {
            let z = cutoff_zeta(y / eps - beta) * cutoff_zeta(hi - y);
            sum += w * gaussian_weight(n, y) * (1.0 - z) * eigenfunction(basis, i, y)? * eigenfunction(basis, j, y)?;
        }
        Ok(sum)
    };
    let mut total = 0.0;
    // Inner region [0, (beta+1) eps], graded toward the origin.
    let inner_hi = (beta + 1.0) * eps;
    let mut a = inner_hi;
    let mut inner = vec![inner_hi, (beta) * eps];
    for _ in 0..40 {
        a *= 0.5;
        inner.push(a.min(beta * eps));
    }
    inner.push(0.0);
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    inner.dedup();
    for wd in inner.windows(2) {
        total += deficit_on(wd[0], wd[1])?;
    }
    // Outer cutoff and beyond, while the weight matters.
    let y_max = basis.quad_spec.y_max;
    if hi - 1.0 < y_max {
        let start = (hi - 1.0).max(inner_hi);
        let b = panel_breaks(&[hi], start, y_max);
        for wd in b.windows(2) {
            total += deficit_on(wd[0], wd[1])?;
        }
    }
    Ok(-total)
}

/// One coercivity sample: `<L f, f>` against `C1 |f'|^2 - C2 |f|^2`.
#[derive(Debug, Clone, Serialize)]
pub struct CoercivitySample {
    pub lhs: f64,
    pub rhs: f64,
    pub norm_sq: f64,
    pub grad_sq: f64,
}

impl CoercivitySample {
    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs
    }
}

/// Constants `(C1, C2)` of the coercivity inequality.
pub fn coercivity_constants(n: u32) -> (f64, f64) {
    let nf = f64::from(n);
    let d = 2.0 * nf - 3.0;
    (
        (4.0 * nf * nf - 20.0 * nf + 17.0) / (d * d),
        (6.0 * nf - 7.0) / (2.0 * d),
    )
}

/// `(f, f', f'')` of exp(-1/(1-s^2)) at `s`.
fn bump_derivs(s: f64) -> (f64, f64, f64) {
    if s.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let q = 1.0 - s * s;
    let b = (-1.0 / q).exp();
    let g1 = -2.0 * s / (q * q);
    let g2 = -2.0 * (1.0 + 3.0 * s * s) / (q * q * q);
    (b, g1 * b, (g2 + g1 * g1) * b)
}

/// Coercivity check on `count` random sums of smooth bumps supported in `(0, 10)`.
pub fn coercivity_samples(basis: &SpectralBasis, seed: u64, count: usize) -> Vec<CoercivitySample> {
    let (c1, c2) = coercivity_constants(basis.params.n);
    let n = basis.params.nf();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gl = GaussLegendre::new(20);
    (0..count)
        .map(|_| {
            let terms: usize = rng.gen_range(1..=3);
            let bumps: Vec<(f64, f64, f64)> = (0..terms)
                .map(|_| {
                    let c: f64 = rng.gen_range(0.1..5.0);
                    let w: f64 = rng.gen_range(0.05..0.95) * c.min(10.0 - c);
                    let amp: f64 = rng.gen_range(-1.0..1.0);
                    (c, w, amp)
                })
                .collect();
            let f = |y: f64| {
                let mut v = (0.0, 0.0, 0.0);
                for &(c, w, amp) in &bumps {
                    let (b, b1, b2) = bump_derivs((y - c) / w);
                    v.0 += amp * b;
                    v.1 += amp * b1 / w;
                    v.2 += amp * b2 / (w * w);
                }
                v
            };
            let mut edges: Vec<f64> = bumps.iter().flat_map(|&(c, w, _)| [c - w, c + w]).collect();
            edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (lo, hi) = (edges[0], *edges.last().unwrap());
            let panels = 400;
            let (mut lhs, mut nrm, mut grad) = (0.0, 0.0, 0.0);
            for k in 0..panels {
                let a = lo + (hi - lo) * k as f64 / panels as f64;
                let b = lo + (hi - lo) * (k + 1) as f64 / panels as f64;
                let mut ys = Vec::new();
                let mut ws = Vec::new();
                gl.push_mapped(a, b, &mut ys, &mut ws);
                for (y, w) in ys.into_iter().zip(ws) {
                    let (v, v1, v2) = f(y);
                    let ww = w * gaussian_weight(n, y);
                    lhs += ww * basis.l_pointwise(y, v, v1, v2) * v;
                    nrm += ww * v * v;
                    grad += ww * v1 * v1;
                }
            }
            CoercivitySample {
                lhs,
                rhs: c1 * grad - c2 * nrm,
                norm_sq: nrm,
                grad_sq: grad,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kummer_trivial_cases() {
        assert_eq!(kummer_m(0.0, 3.5, 2.0).unwrap(), 1.0);
        assert_eq!(kummer_m(-3.0, 3.5, 0.0).unwrap(), 1.0);
        assert!(kummer_m(-1.0, -2.0, 1.0).is_err());
        assert!(kummer_m(0.5, 2.0, 1.0).is_err());
    }

    #[test]
    fn zeta_endpoints_and_middle() {
        assert_eq!(cutoff_zeta(-1.0), 0.0);
        assert_eq!(cutoff_zeta(2.0), 1.0);
        assert!((cutoff_zeta(0.5) - 0.5).abs() < 1e-14);
        assert!((cutoff_zeta(0.3) + cutoff_zeta(0.7) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zeta_derivative_matches_difference() {
        let h = 1e-6;
        for &r in &[0.2, 0.5, 0.8] {
            let fd = (cutoff_zeta(r + h) - cutoff_zeta(r - h)) / (2.0 * h);
            assert!((fd - cutoff_zeta_prime(r)).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_function_is_annihilated() {
        let b = SpectralBasis::new(&Parameters::new(5).unwrap()).unwrap();
        let ys: Vec<f64> = (0..50).map(|j| 1.0 + 0.005 * j as f64).collect();
        let (_, l) = apply_l(&b, &ys, &vec![0.0; ys.len()]).unwrap();
        assert!(l.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn coarse_grid_rejected() {
        let b = SpectralBasis::new(&Parameters::new(5).unwrap()).unwrap();
        let ys: Vec<f64> = (0..10).map(|j| 1.0 + 0.5 * j as f64).collect();
        let err = apply_l(&b, &ys, &[0.0; 10]).unwrap_err();
        assert!(err.to_string().contains("required"));
    }

    #[test]
    fn integrability_guard() {
        let p = Parameters::new(5).unwrap();
        assert!(check_integrable(&p, -9.5).is_err());
        assert!(check_integrable(&p, 2.0 * p.alpha).is_ok());
    }
}
