//! The radial flow `d_t u = u''/(1+u'^2) + (n-1)(u'/x - 1/u)` for the profile
//! `u = u_hat(x, t)` of an O(n)xO(n)-invariant hypersurface.
//!
//! The state is stored as the offset `d = u_hat - x` from Simons' cone, which
//! keeps the far field free of cancellation. Space is discretised with
//! three-point stencils on a graded grid `x_j = A sinh(c j)`; time with the
//! two-stage IMEX scheme ARS(2,2,2), implicit in the (frozen-coefficient)
//! diffusion and explicit in everything else.

use std::f64::consts::SQRT_2;
use std::fmt;

use serde::Serialize;

use crate::error::{numeric, precondition, Error, Result};
use crate::minimal_profile::{canonical_profile, scale_profile, to_cone_graph};
use crate::numerics::fd::fornberg;
use crate::numerics::interp::lagrange_index;
use crate::numerics::tridiag;
use crate::parameters::Parameters;
use crate::spectral::{cutoff_zeta, cutoff_zeta_prime};

/// What the run starts from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialKind {
    /// Three-region data that develops the type II singularity.
    Singular,
    /// The round cylinder `u_hat = r0`.
    Cylinder { r0: f64 },
    /// The stationary profile `psi_hat_k`.
    Profile { k: f64 },
}

/// Treatment of the outer end `x = x_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterBc {
    /// Held at the initial value.
    Dirichlet,
    /// Evolved with one-sided differences.
    Free,
}

/// Run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct FlowConfig {
    pub params: Parameters,
    pub a0: f64,
    pub a1: f64,
    pub t0: f64,
    pub t_min: f64,
    pub rho: f64,
    pub beta: f64,
    /// The constant in the a-priori bound on the diagonal graph.
    pub lambda_cap: f64,
    pub nx: usize,
    pub x_max: f64,
    /// Fraction of the explicit stability limit used per step.
    pub cfl: f64,
    pub snapshot_count: usize,
    /// Regrid once the tip scale spans fewer than this many axis cells.
    pub regrid_cells: f64,
    /// Tip scale over axis spacing after a regrid.
    pub axis_cells: f64,
    pub initial: InitialKind,
    pub outer_bc: OuterBc,
}

const CONFIG_KEYS: &[&str] = &[
    "n",
    "a0",
    "a1",
    "t0",
    "t_min",
    "rho",
    "beta",
    "lambda_cap",
    "nx",
    "x_max",
    "cfl",
    "snapshot_count",
    "regrid_cells",
    "axis_cells",
    "initial",
    "cylinder_r0",
    "profile_k",
    "outer_bc",
];

impl FlowConfig {
    /// Defaults for the singular run in dimension `n`.
    pub fn new(n: u32) -> Result<Self> {
        Ok(Self {
            params: Parameters::new(n)?,
            a0: 0.0,
            a1: 0.0,
            t0: -0.01,
            t_min: 1e-5,
            rho: 1.0,
            beta: 3.0,
            lambda_cap: 20.0,
            nx: 800,
            x_max: 4.0,
            cfl: 0.1,
            snapshot_count: 40,
            regrid_cells: 8.0,
            axis_cells: 20.0,
            initial: InitialKind::Singular,
            outer_bc: OuterBc::Dirichlet,
        })
    }

    /// Radius `beta^(2(alpha-1))` of the admissible `(a0, a1)` disc.
    pub fn box_radius(&self) -> f64 {
        self.beta.powf(2.0 * (self.params.alpha - 1.0))
    }

    /// Tip length scale at time `t`.
    pub fn tip_scale(&self, t: f64) -> f64 {
        match self.initial {
            InitialKind::Singular => self.params.tip_scale(-t),
            InitialKind::Cylinder { r0 } => r0,
            InitialKind::Profile { k } => k.powf(self.params.scale_exponent()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if !(self.t0 < 0.0 && self.t_min > 0.0) {
            return precondition(format!(
                "need t0 < 0 < t_min, got t0 = {}, t_min = {}",
                self.t0, self.t_min
            ));
        }
        if self.nx < 16 {
            return precondition(format!("nx must be at least 16, got {}", self.nx));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return precondition(format!("cfl must lie in (0, 1], got {}", self.cfl));
        }
        if !(self.lambda_cap > 0.0 && self.regrid_cells > 1.0 && self.axis_cells > self.regrid_cells) {
            return precondition("need lambda_cap > 0 and axis_cells > regrid_cells > 1");
        }
        match self.initial {
            InitialKind::Singular => {
                if p.n < 5 {
                    return precondition(format!("the singular family needs n >= 5, got {}", p.n));
                }
                let r = self.a0.hypot(self.a1);
                if r > self.box_radius() * (1.0 + 1e-12) {
                    return precondition(format!(
                        "(a0, a1) = ({}, {}) outside the box of radius {}",
                        self.a0,
                        self.a1,
                        self.box_radius()
                    ));
                }
                let tip = self.beta * self.tip_scale(self.t0);
                if !(self.rho > 0.0 && self.beta > 1.0 && tip < 0.5 * self.rho) {
                    return precondition(format!(
                        "region constants out of order: beta (-t0)^(1/2+sigma) = {tip} must be below rho/2 = {}",
                        0.5 * self.rho
                    ));
                }
                if self.x_max < 2.0 * self.rho {
                    return precondition(format!("x_max = {} must be at least 2 rho", self.x_max));
                }
            }
            InitialKind::Cylinder { r0 } => {
                if !(r0 > 0.0) {
                    return precondition(format!("cylinder radius must be positive, got {r0}"));
                }
            }
            InitialKind::Profile { k } => {
                if !(k > 0.0) {
                    return precondition(format!("profile scale must be positive, got {k}"));
                }
            }
        }
        Ok(())
    }

    /// Parse a flat `key = value` file; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return precondition(format!("line {}: expected key = value", lineno + 1));
            };
            let k = k.trim().to_string();
            if !CONFIG_KEYS.contains(&k.as_str()) {
                return precondition(format!("line {}: unknown key '{k}'", lineno + 1));
            }
            pairs.push((k, v.trim().to_string()));
        }
        let get = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let num = |key: &str| -> Result<Option<f64>> {
            get(key)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Precondition(format!("{key}: not a number: '{v}'")))
                })
                .transpose()
        };
        let int = |key: &str| -> Result<Option<usize>> {
            get(key)
                .map(|v| {
                    v.parse::<usize>()
                        .map_err(|_| Error::Precondition(format!("{key}: not an integer: '{v}'")))
                })
                .transpose()
        };
        let n = match get("n") {
            Some(v) => v
                .parse::<u32>()
                .map_err(|_| Error::Precondition(format!("n: not an integer: '{v}'")))?,
            None => 5,
        };
        let mut c = Self::new(n)?;
        macro_rules! set {
            ($field:ident, $getter:ident) => {
                if let Some(v) = $getter(stringify!($field))? {
                    c.$field = v;
                }
            };
        }
        set!(a0, num);
        set!(a1, num);
        set!(t0, num);
        set!(t_min, num);
        set!(rho, num);
        set!(beta, num);
        set!(lambda_cap, num);
        set!(nx, int);
        set!(x_max, num);
        set!(cfl, num);
        set!(snapshot_count, int);
        set!(regrid_cells, num);
        set!(axis_cells, num);
        c.initial = match get("initial").unwrap_or("singular") {
            "singular" => InitialKind::Singular,
            "cylinder" => InitialKind::Cylinder {
                r0: num("cylinder_r0")?.unwrap_or(1.0),
            },
            "profile" => InitialKind::Profile {
                k: num("profile_k")?.unwrap_or(1.0),
            },
            other => {
                return precondition(format!(
                    "initial: expected singular, cylinder or profile, got '{other}'"
                ))
            }
        };
        c.outer_bc = match get("outer_bc").unwrap_or("dirichlet") {
            "dirichlet" => OuterBc::Dirichlet,
            "free" => OuterBc::Free,
            other => return precondition(format!("outer_bc: expected dirichlet or free, got '{other}'")),
        };
        c.validate()?;
        Ok(c)
    }

    /// Render in the format accepted by [`FlowConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "n = {}\na0 = {:e}\na1 = {:e}\nt0 = {:e}\nt_min = {:e}\nrho = {:e}\nbeta = {:e}\nlambda_cap = {:e}\n\
             nx = {}\nx_max = {:e}\ncfl = {:e}\nsnapshot_count = {}\nregrid_cells = {:e}\naxis_cells = {:e}\n",
            self.params.n,
            self.a0,
            self.a1,
            self.t0,
            self.t_min,
            self.rho,
            self.beta,
            self.lambda_cap,
            self.nx,
            self.x_max,
            self.cfl,
            self.snapshot_count,
            self.regrid_cells,
            self.axis_cells
        );
        match self.initial {
            InitialKind::Singular => s.push_str("initial = singular\n"),
            InitialKind::Cylinder { r0 } => s.push_str(&format!("initial = cylinder\ncylinder_r0 = {r0:e}\n")),
            InitialKind::Profile { k } => s.push_str(&format!("initial = profile\nprofile_k = {k:e}\n")),
        }
        s.push_str(match self.outer_bc {
            OuterBc::Dirichlet => "outer_bc = dirichlet\n",
            OuterBc::Free => "outer_bc = free\n",
        });
        s
    }
}

/// Radial grid with precomputed three-point stencils.
#[derive(Debug, Clone)]
pub struct Grid {
    pub x: Vec<f64>,
    /// `(A, c)` of the map `x = A sinh(c j)`; `c = 0` marks a uniform grid of spacing `A`.
    map: Option<(f64, f64)>,
    d1: Vec<[f64; 3]>,
    d2: Vec<[f64; 3]>,
    /// One-sided stencils at the outer end on the last three nodes.
    bd1: [f64; 3],
    bd2: [f64; 3],
}

fn ln_sinh(y: f64) -> f64 {
    y + (0.5 * (1.0 - (-2.0 * y).exp())).ln()
}

impl Grid {
    /// `x_j = A sinh(c j)`, `j = 0..=nx`, with `x_1 = h0` and `x_nx = x_max`.
    /// Falls back to a uniform grid when `nx` uniform cells already resolve `h0`.
    pub fn graded(nx: usize, x_max: f64, h0: f64) -> Result<Self> {
        if !(h0 > 0.0 && x_max > h0) {
            return precondition(format!("grid needs 0 < h0 < x_max, got h0 = {h0}, x_max = {x_max}"));
        }
        let nf = nx as f64;
        let target = (x_max / h0).ln();
        let x: Vec<f64>;
        let map;
        if target <= nf.ln() + 1e-12 {
            let h = x_max / nf;
            x = (0..=nx).map(|j| if j == nx { x_max } else { h * j as f64 }).collect();
            map = (h, 0.0);
        } else {
            let g = |c: f64| ln_sinh(c * nf) - ln_sinh(c) - target;
            let (mut lo, mut hi) = (1e-12, 1.0);
            while g(hi) < 0.0 {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let c = 0.5 * (lo + hi);
            let a = h0 / c.sinh();
            x = (0..=nx)
                .map(|j| if j == nx { x_max } else { a * (c * j as f64).sinh() })
                .collect();
            map = (a, c);
        }
        let mut g = Self::from_nodes(x)?;
        g.map = Some(map);
        Ok(g)
    }

    /// Grid on arbitrary increasing nodes with `x[0] = 0`.
    pub fn from_nodes(x: Vec<f64>) -> Result<Self> {
        if x.len() < 4 || x[0] != 0.0 || x.windows(2).any(|w| !(w[1] > w[0])) {
            return precondition("grid must start at 0 and be strictly increasing with at least 4 nodes");
        }
        let m = x.len();
        let mut d1 = vec![[0.0; 3]; m];
        let mut d2 = vec![[0.0; 3]; m];
        for j in 1..m - 1 {
            let hm = x[j] - x[j - 1];
            let hp = x[j + 1] - x[j];
            d1[j] = [-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))];
            d2[j] = [2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp))];
        }
        let w = fornberg(x[m - 1], &x[m - 3..], 2);
        Ok(Self {
            x,
            map: None,
            d1,
            d2,
            bd1: [w[1][0], w[1][1], w[1][2]],
            bd2: [w[2][0], w[2][1], w[2][2]],
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Fractional index of `x` under the grid map.
    fn index_of(&self, x: f64) -> Option<f64> {
        let (a, c) = self.map?;
        Some(if c == 0.0 { x / a } else { (x / a).asinh() / c })
    }

    /// Three-point first and second differences of `f` at interior node `j`.
    fn diff(&self, f: &[f64], j: usize) -> (f64, f64) {
        let (a, b) = (&self.d1[j], &self.d2[j]);
        let (l, c, r) = (f[j - 1], f[j], f[j + 1]);
        (a[0] * l + a[1] * c + a[2] * r, b[0] * l + b[1] * c + b[2] * r)
    }

    fn diff_outer(&self, f: &[f64]) -> (f64, f64) {
        let m = f.len();
        let s = &f[m - 3..];
        (
            self.bd1[0] * s[0] + self.bd1[1] * s[1] + self.bd1[2] * s[2],
            self.bd2[0] * s[0] + self.bd2[1] * s[1] + self.bd2[2] * s[2],
        )
    }
}

/// First and second `x`-derivatives of the offset `d` at every node.
///
/// `order = 2` uses the three-point stencils of the scheme; `order = 4` uses
/// centred five-point stencils away from both ends. At the axis the even
/// reflection `d(-x) = d(x) + 2x` supplies ghost values.
pub fn offset_derivatives(x: &[f64], d: &[f64], order: usize) -> (Vec<f64>, Vec<f64>) {
    let m = x.len();
    let mut d1 = vec![0.0; m];
    let mut d2 = vec![0.0; m];
    let half = if order >= 4 { 2 } else { 1 };
    // Axis: d' = -1 by symmetry, d'' from the ghost-node parabola.
    d1[0] = -1.0;
    d2[0] = 2.0 * (d[1] - d[0] + x[1]) / (x[1] * x[1]);
    for j in 1..m {
        let (lo, hi) = if j + half >= m {
            ((m - 1 - 2 * half) as isize, m - 1)
        } else {
            (j as isize - half as isize, j + half)
        };
        let mut xs = Vec::with_capacity(2 * half + 1);
        let mut fs = Vec::with_capacity(2 * half + 1);
        for i in lo..=(hi as isize) {
            if i < 0 {
                let k = (-i) as usize;
                xs.push(-x[k]);
                fs.push(d[k] + 2.0 * x[k]);
            } else {
                xs.push(x[i as usize]);
                fs.push(d[i as usize]);
            }
        }
        let w = fornberg(x[j], &xs, 2);
        d1[j] = (0..xs.len()).map(|i| w[1][i] * fs[i]).sum();
        d2[j] = (0..xs.len()).map(|i| w[2][i] * fs[i]).sum();
    }
    (d1, d2)
}

/// A recorded solution.
#[derive(Debug, Clone, Serialize)]
pub struct FlowState {
    pub t: f64,
    pub x: Vec<f64>,
    /// `u_hat - x`.
    pub d: Vec<f64>,
    /// `d_t u_hat` of the semi-discrete system at `t`.
    pub velocity: Vec<f64>,
    /// Grid revision (incremented per regrid).
    pub revision: usize,
}

impl FlowState {
    pub fn u_hat(&self) -> Vec<f64> {
        self.x.iter().zip(&self.d).map(|(x, d)| x + d).collect()
    }

    pub fn minus_t(&self) -> f64 {
        -self.t
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    /// Reached `(-t) = t_min`.
    Completed,
    /// Reached the requested stop time.
    Stopped,
    APrioriViolated {
        t: f64,
        order: usize,
        x: f64,
        ratio: f64,
    },
    GraphLost {
        t: f64,
        x: f64,
    },
    Pinched {
        t: f64,
        x: f64,
    },
    StepRejected {
        t: f64,
        message: String,
    },
}

impl Termination {
    pub fn is_admissible(&self) -> bool {
        matches!(self, Termination::Completed | Termination::Stopped)
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Completed => write!(f, "completed"),
            Termination::Stopped => write!(f, "stopped at requested time"),
            Termination::APrioriViolated { t, order, x, ratio } => write!(
                f,
                "a-priori bound violated at t = {t:e}: derivative order {order} at x = {x:e} exceeds the cap by {ratio:.3}x"
            ),
            Termination::GraphLost { t, x } => write!(f, "graph over the cone lost at t = {t:e}, x = {x:e}"),
            Termination::Pinched { t, x } => write!(f, "pinched at t = {t:e}, x = {x:e}"),
            Termination::StepRejected { t, message } => write!(f, "step rejected at t = {t:e}: {message}"),
        }
    }
}

/// Snapshots of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub config: FlowConfig,
    pub snapshots: Vec<FlowState>,
    pub termination: Termination,
    /// `(t, revision)` of each regrid.
    pub regrids: Vec<(f64, usize)>,
    pub steps: usize,
}

/// Diagonal-graph samples `u(X)` with `X = (x + u_hat)/sqrt 2`, `u = (u_hat - x)/sqrt 2`.
#[derive(Debug, Clone, Serialize)]
pub struct DiagonalGraph {
    pub t: f64,
    pub xd: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub ddu: Vec<f64>,
}

/// Rotate the radial state onto the diagonal for nodes with `X >= lo`.
pub fn to_diagonal_graph(state: &FlowState, lo: f64) -> Result<DiagonalGraph> {
    let (d1, d2) = offset_derivatives(&state.x, &state.d, 2);
    let mut g = DiagonalGraph {
        t: state.t,
        xd: Vec::new(),
        u: Vec::new(),
        du: Vec::new(),
        ddu: Vec::new(),
    };
    for j in 0..state.x.len() {
        let xd = (2.0 * state.x[j] + state.d[j]) / SQRT_2;
        if xd < lo {
            continue;
        }
        let s = 2.0 + d1[j];
        if !(s > 0.0) {
            return numeric(format!("not a graph over the cone at node {j} (x = {})", state.x[j]));
        }
        if let Some(prev) = g.xd.last() {
            if !(xd > *prev) {
                return numeric(format!(
                    "diagonal coordinate not increasing at node {j} (x = {})",
                    state.x[j]
                ));
            }
        }
        g.xd.push(xd);
        g.u.push(state.d[j] / SQRT_2);
        g.du.push(d1[j] / s);
        g.ddu.push(2.0 * SQRT_2 * d2[j] / s.powi(3));
    }
    Ok(g)
}

/// Diagonal graph of the three-region initial data, with its derivative in `X`.
struct InitialGraph {
    params: Parameters,
    ell: f64,
    minus_t0: f64,
    k: f64,
    a1: f64,
    beta: f64,
    rho: f64,
    cone: crate::minimal_profile::ConeGraph,
}

impl InitialGraph {
    fn intermediate(&self, xd: f64) -> (f64, f64) {
        let p = &self.params;
        let a = p.alpha;
        let m = self.minus_t0;
        let c0 = self.k * m * m;
        let c1 = (2.0 + self.a1) * p.upsilon1 * m;
        let c2 = p.upsilon2;
        (
            c0 * xd.powf(a) + c1 * xd.powf(a + 2.0) + c2 * xd.powf(a + 4.0),
            c0 * a * xd.powf(a - 1.0) + c1 * (a + 2.0) * xd.powf(a + 1.0) + c2 * (a + 4.0) * xd.powf(a + 3.0),
        )
    }

    fn outer(&self, xd: f64) -> (f64, f64) {
        let p = &self.params;
        let e = p.alpha + 4.0;
        let q = 1.0 + xd.powi(4);
        let f = p.upsilon2 * xd.powf(e) / q;
        let df = p.upsilon2 * (e * xd.powf(e - 1.0) / q - 4.0 * xd.powf(e + 3.0) / (q * q));
        (f, df)
    }

    fn tip(&self, xd: f64) -> (f64, f64) {
        let (psi, dpsi, _) = self.cone.eval(xd / self.ell);
        (self.ell * psi, dpsi)
    }

    /// Blended `(u, u')` at diagonal coordinate `xd`, and the region label.
    fn eval(&self, xd: f64) -> (f64, f64, &'static str) {
        let z = xd / self.ell;
        let hb = 0.5 * self.beta;
        let w1 = cutoff_zeta((z - hb) / hb);
        let dw1 = cutoff_zeta_prime((z - hb) / hb) / (hb * self.ell);
        let w2 = cutoff_zeta((xd - self.rho) / self.rho);
        let dw2 = cutoff_zeta_prime((xd - self.rho) / self.rho) / self.rho;
        let (mid, dmid, label) = if w2 == 0.0 {
            let (f, df) = self.intermediate(xd);
            (f, df, "intermediate")
        } else {
            let (fi, dfi) = self.intermediate(xd);
            let (fo, dfo) = self.outer(xd);
            (
                (1.0 - w2) * fi + w2 * fo,
                (1.0 - w2) * dfi + w2 * dfo + dw2 * (fo - fi),
                if w2 < 1.0 { "outer blend" } else { "outer" },
            )
        };
        if w1 >= 1.0 {
            return (mid, dmid, label);
        }
        let (ft, dft) = self.tip(xd);
        (
            (1.0 - w1) * ft + w1 * mid,
            (1.0 - w1) * dft + w1 * dmid + dw1 * (mid - ft),
            if w1 > 0.0 { "tip blend" } else { "tip" },
        )
    }
}

/// Offsets of the three-region initial data on `grid`.
fn singular_offsets(cfg: &FlowConfig, grid: &Grid) -> Result<Vec<f64>> {
    let p = &cfg.params;
    let k = 1.0 + cfg.a0 + cfg.a1;
    let canon = canonical_profile(p)?;
    let prof = scale_profile(&canon, k)?;
    let cone = to_cone_graph(&prof)?;
    let ell = cfg.tip_scale(cfg.t0);
    let hb = 0.5 * cfg.beta;
    if cone.z0() >= hb {
        return precondition(format!(
            "tip blend starts at z = {hb} but the tip is not a graph over the cone below z = {}",
            cone.z0()
        ));
    }
    let g = InitialGraph {
        params: p.clone(),
        ell,
        minus_t0: -cfg.t0,
        k,
        a1: cfg.a1,
        beta: cfg.beta,
        rho: cfg.rho,
        cone: cone.clone(),
    };
    // Radial form below the blend: u_hat = ell psi_hat_k(x / ell).
    let r_switch = ell * cone.radial_of(hb);
    let mut d = Vec::with_capacity(grid.len());
    let mut xd_prev: f64 = hb * ell;
    for &x in &grid.x {
        if x <= r_switch {
            d.push(ell * prof.offset(x / ell).0);
            continue;
        }
        // Solve X - u(X) = sqrt 2 x.
        let target = SQRT_2 * x;
        let mut xd = (target + SQRT_2 * d.last().copied().unwrap_or(0.0)).max(xd_prev);
        let mut ok = false;
        let mut label = "";
        for _ in 0..100 {
            let (u, du, l) = g.eval(xd);
            label = l;
            let slope = 1.0 - du;
            if !(slope > 0.0) {
                return numeric(format!(
                    "initial data is not a graph over the cone in the {l} region at X = {xd}"
                ));
            }
            let step = (xd - u - target) / slope;
            xd -= step;
            if step.abs() <= 1e-15 * xd.max(1e-300) {
                ok = true;
                break;
            }
        }
        if !ok {
            return numeric(format!(
                "initial data inversion failed in the {label} region at x = {x}"
            ));
        }
        let (u, _, l) = g.eval(xd);
        let uh = x + SQRT_2 * u;
        if !(uh > 0.0) {
            return numeric(format!("initial data has u_hat <= 0 in the {l} region at x = {x}"));
        }
        xd_prev = xd;
        d.push(SQRT_2 * u);
    }
    Ok(d)
}

/// Initial state for `config`.
pub fn build_initial_data(config: &FlowConfig) -> Result<FlowState> {
    let solver = Solver::new(config)?;
    Ok(solver.state())
}

/// Time stepper with its grid; owns the evolving offset.
#[derive(Debug, Clone)]
pub struct Solver {
    pub config: FlowConfig,
    pub grid: Grid,
    pub d: Vec<f64>,
    pub t: f64,
    pub revision: usize,
    pub steps: usize,
    pub regrids: Vec<(f64, usize)>,
    /// `psi_hat_1(0)`, the axis value of the canonical profile.
    psi0: f64,
}

const GAMMA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
/// Axis radius assumed by the step schedule, relative to `ell(t) psi_hat_1(0)`.
const SCHEDULE_MARGIN: f64 = 0.8;

impl Solver {
    pub fn new(config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        let ell = config.tip_scale(config.t0);
        let grid = Grid::graded(config.nx, config.x_max, ell / config.axis_cells)?;
        let d = match config.initial {
            InitialKind::Singular => singular_offsets(config, &grid)?,
            InitialKind::Cylinder { r0 } => grid.x.iter().map(|x| r0 - x).collect(),
            InitialKind::Profile { k } => {
                let prof = scale_profile(&canonical_profile(&config.params)?, k)?;
                grid.x.iter().map(|&x| prof.offset(x).0).collect()
            }
        };
        let psi0 = match config.initial {
            InitialKind::Singular => canonical_profile(&config.params)?.psi0(),
            _ => 0.0,
        };
        Ok(Self {
            config: config.clone(),
            grid,
            d,
            t: config.t0,
            revision: 0,
            steps: 0,
            regrids: Vec::new(),
            psi0,
        })
    }

    /// Solver on an explicit grid and offset (for direct stepping).
    pub fn from_state(config: &FlowConfig, state: &FlowState) -> Result<Self> {
        let grid = Grid::from_nodes(state.x.clone())?;
        Ok(Self {
            config: config.clone(),
            grid,
            d: state.d.clone(),
            t: state.t,
            revision: state.revision,
            steps: 0,
            regrids: Vec::new(),
            psi0: 0.0,
        })
    }

    pub fn state(&self) -> FlowState {
        FlowState {
            t: self.t,
            x: self.grid.x.clone(),
            d: self.d.clone(),
            velocity: self.velocity(&self.d),
            revision: self.revision,
        }
    }

    fn nf(&self) -> f64 {
        self.config.params.nf()
    }

    /// Largest stable step for the explicit reaction terms.
    pub fn dt_limit(&self) -> f64 {
        let umin = self
            .grid
            .x
            .iter()
            .zip(&self.d)
            .map(|(x, d)| x + d)
            .fold(f64::INFINITY, f64::min);
        0.2 * umin * umin / (self.nf() - 1.0)
    }

    /// `d_t u_hat` of the semi-discrete system.
    pub fn velocity(&self, d: &[f64]) -> Vec<f64> {
        let a = self.coefficients(d);
        let mut e = vec![0.0; d.len()];
        let mut i = vec![0.0; d.len()];
        self.split(d, &a, &mut e, &mut i);
        e.iter().zip(&i).map(|(a, b)| a + b).collect()
    }

    /// Diffusion coefficients `1/(1 + u_hat_x^2)`.
    fn coefficients(&self, d: &[f64]) -> Vec<f64> {
        let m = d.len();
        let mut a = vec![1.0; m];
        for (j, aj) in a.iter_mut().enumerate().take(m - 1).skip(1) {
            let (d1, _) = self.grid.diff(d, j);
            let ux = 1.0 + d1;
            *aj = 1.0 / (1.0 + ux * ux);
        }
        a
    }

    /// Explicit part `E` and implicit part `I` with frozen coefficients `astar`.
    fn split(&self, d: &[f64], astar: &[f64], e: &mut [f64], imp: &mut [f64]) {
        let n = self.nf();
        let x = &self.grid.x;
        let m = d.len();
        let x1 = x[1];
        imp[0] = 2.0 * n * (d[1] - d[0]) / (x1 * x1);
        e[0] = 2.0 * n / x1 - (n - 1.0) / d[0];
        for j in 1..m - 1 {
            let (d1, d2) = self.grid.diff(d, j);
            let ux = 1.0 + d1;
            let a = 1.0 / (1.0 + ux * ux);
            let uh = x[j] + d[j];
            imp[j] = astar[j] * d2 + (n - 1.0) * d1 / x[j];
            e[j] = (a - astar[j]) * d2 + (n - 1.0) * d[j] / (x[j] * uh);
        }
        imp[m - 1] = 0.0;
        e[m - 1] = match self.config.outer_bc {
            OuterBc::Dirichlet => 0.0,
            OuterBc::Free => {
                let (d1, d2) = self.grid.diff_outer(d);
                let ux = 1.0 + d1;
                let xm = x[m - 1];
                d2 / (1.0 + ux * ux) + (n - 1.0) * d1 / xm + (n - 1.0) * d[m - 1] / (xm * (xm + d[m - 1]))
            }
        };
    }

    /// Solve `(1 - g I) v = rhs` in place.
    fn implicit_solve(&self, astar: &[f64], g: f64, rhs: &mut [f64]) -> bool {
        let n = self.nf();
        let x = &self.grid.x;
        let m = rhs.len();
        let mut lower = vec![0.0; m];
        let mut diag = vec![1.0; m];
        let mut upper = vec![0.0; m];
        let c0 = 2.0 * n / (x[1] * x[1]);
        diag[0] = 1.0 + g * c0;
        upper[0] = -g * c0;
        for j in 1..m - 1 {
            let s1 = &self.grid.d1[j];
            let s2 = &self.grid.d2[j];
            let r = (n - 1.0) / x[j];
            lower[j] = -g * (astar[j] * s2[0] + r * s1[0]);
            diag[j] = 1.0 - g * (astar[j] * s2[1] + r * s1[1]);
            upper[j] = -g * (astar[j] * s2[2] + r * s1[2]);
        }
        let mut scratch = vec![0.0; m];
        tridiag::solve(&lower, &diag, &upper, rhs, &mut scratch)
    }

    /// One ARS(2,2,2) step of size `dt`.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let limit = self.dt_limit();
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-9) {
            return precondition(format!("time step {dt:e} violates the stability limit {limit:e}"));
        }
        let m = self.d.len();
        let delta = 1.0 - 1.0 / (2.0 * GAMMA);
        let astar = self.coefficients(&self.d);
        let mut e1 = vec![0.0; m];
        let mut i1 = vec![0.0; m];
        self.split(&self.d, &astar, &mut e1, &mut i1);
        let mut u2: Vec<f64> = (0..m).map(|j| self.d[j] + dt * GAMMA * e1[j]).collect();
        if !self.implicit_solve(&astar, GAMMA * dt, &mut u2) {
            return numeric("singular implicit system");
        }
        let mut e2 = vec![0.0; m];
        let mut i2 = vec![0.0; m];
        self.split(&u2, &astar, &mut e2, &mut i2);
        let mut u3: Vec<f64> = (0..m)
            .map(|j| self.d[j] + dt * (delta * e1[j] + (1.0 - delta) * e2[j] + (1.0 - GAMMA) * i2[j]))
            .collect();
        if !self.implicit_solve(&astar, GAMMA * dt, &mut u3) {
            return numeric("singular implicit system");
        }
        for (x, d) in self.grid.x.iter().zip(&u3) {
            let uh = x + d;
            if !(uh > 0.0 && uh.is_finite()) {
                return numeric(format!("u_hat left (0, inf) at x = {x} (t = {:e})", self.t + dt));
            }
        }
        self.d = u3;
        self.t += dt;
        self.steps += 1;
        Ok(())
    }

    /// Step size from the tip-scale schedule, clamped to the stability limit.
    fn scheduled_dt(&self) -> f64 {
        let limit = self.dt_limit();
        match self.config.initial {
            InitialKind::Singular => {
                // A function of t alone, so that the step sequence (and hence the
                // projections used by the shooting) varies smoothly with (a0, a1).
                let s = SCHEDULE_MARGIN * self.config.tip_scale(self.t) * self.psi0;
                let sched = self.config.cfl * 0.2 * s * s / (self.nf() - 1.0);
                if sched <= limit {
                    sched
                } else {
                    self.config.cfl * limit
                }
            }
            _ => self.config.cfl * limit,
        }
    }

    /// Regrid when the tip scale is resolved by too few axis cells.
    pub fn maybe_regrid(&mut self) -> Result<bool> {
        if self.config.initial != InitialKind::Singular {
            return Ok(false);
        }
        let ell = self.config.tip_scale(self.t);
        if ell >= self.config.regrid_cells * self.grid.x[1] {
            return Ok(false);
        }
        let new = Grid::graded(self.config.nx, self.config.x_max, ell / self.config.axis_cells)?;
        let old = &self.grid;
        let x_old = &old.x;
        let d_old = &self.d;
        let m_old = x_old.len();
        let mut d = Vec::with_capacity(new.len());
        for &x in &new.x {
            let xi = old
                .index_of(x)
                .ok_or_else(|| Error::Numeric("regrid needs a mapped grid".into()))?;
            let xi = xi.min((m_old - 1) as f64);
            d.push(lagrange_index(d_old, xi, 6, |j| {
                // Even reflection of u_hat through the axis.
                let k = (-j) as usize;
                d_old[k] + 2.0 * x_old[k]
            }));
        }
        let last = d.len() - 1;
        d[last] = d_old[m_old - 1];
        self.grid = new;
        self.d = d;
        self.revision += 1;
        self.regrids.push((self.t, self.revision));
        Ok(true)
    }

    /// Advance to `t_target`, landing on it exactly.
    pub fn advance_to(&mut self, t_target: f64) -> std::result::Result<(), Termination> {
        while self.t < t_target {
            self.maybe_regrid().map_err(|e| Termination::StepRejected {
                t: self.t,
                message: e.to_string(),
            })?;
            let mut dt = self.scheduled_dt();
            let rem = t_target - self.t;
            if dt >= rem || rem - dt < 1e-3 * dt {
                dt = rem.min(self.dt_limit());
            }
            let t_before = self.t;
            if !(dt > 1e-14 * rem.max(self.t.abs()) && dt.is_finite()) {
                return Err(Termination::Pinched {
                    t: t_before,
                    x: self.pinch_location(),
                });
            }
            if let Err(e) = self.step(dt) {
                return Err(match e {
                    Error::Numeric(msg) if msg.contains("u_hat") => Termination::Pinched {
                        t: t_before,
                        x: self.pinch_location(),
                    },
                    other => Termination::StepRejected {
                        t: t_before,
                        message: other.to_string(),
                    },
                });
            }
            if dt == rem {
                self.t = t_target;
            }
        }
        Ok(())
    }

    fn pinch_location(&self) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (x, d) in self.grid.x.iter().zip(&self.d) {
            if x + d < best.0 {
                best = (x + d, *x);
            }
        }
        best.1
    }

    /// Check the graph condition and the a-priori bound
    /// `X^i |d^i u| < Lambda ((-t)^2 X^alpha + X^(alpha+4))` on `[beta ell, rho]`.
    pub fn monitor(&self) -> Option<Termination> {
        if self.config.initial != InitialKind::Singular {
            return None;
        }
        let c = &self.config;
        let a = c.params.alpha;
        let mt = -self.t;
        let lo = c.beta * c.tip_scale(self.t);
        let state = FlowState {
            t: self.t,
            x: self.grid.x.clone(),
            d: self.d.clone(),
            velocity: Vec::new(),
            revision: self.revision,
        };
        let g = match to_diagonal_graph(&state, lo) {
            Ok(g) => g,
            Err(_) => return Some(Termination::GraphLost { t: self.t, x: lo }),
        };
        for j in 0..g.xd.len() {
            let xd = g.xd[j];
            if xd > c.rho {
                break;
            }
            let bound = c.lambda_cap * (mt * mt * xd.powf(a) + xd.powf(a + 4.0));
            for (order, v) in [g.u[j], xd * g.du[j], xd * xd * g.ddu[j]].into_iter().enumerate() {
                if !(v.abs() < bound) {
                    return Some(Termination::APrioriViolated {
                        t: self.t,
                        order,
                        x: xd,
                        ratio: v.abs() / bound,
                    });
                }
            }
        }
        None
    }
}

/// One step from `state` (fresh grid stencils, no regridding).
pub fn step(config: &FlowConfig, state: &FlowState, dt: f64) -> Result<FlowState> {
    let mut s = Solver::from_state(config, state)?;
    s.step(dt)?;
    Ok(s.state())
}

/// Snapshot times `t_k`, geometric in `(-t)` from `t0` to `-t_min`.
pub fn snapshot_times(config: &FlowConfig) -> Vec<f64> {
    let m0 = -config.t0;
    if config.t_min >= m0 || config.snapshot_count == 0 {
        return Vec::new();
    }
    let cnt = config.snapshot_count;
    (1..=cnt)
        .map(|k| {
            if k == cnt {
                -config.t_min
            } else {
                -m0 * (config.t_min / m0).powf(k as f64 / cnt as f64)
            }
        })
        .collect()
}

/// Integrate from `t0` towards `-t_min`, recording snapshots.
pub fn run(config: &FlowConfig) -> Result<Trajectory> {
    let mut solver = Solver::new(config)?;
    let mut snapshots = vec![solver.state()];
    let mut termination = Termination::Completed;
    if let Some(bad) = solver.monitor() {
        termination = bad;
    } else {
        for t in snapshot_times(config) {
            if let Err(term) = solver.advance_to(t) {
                termination = term;
                break;
            }
            snapshots.push(solver.state());
            if let Some(bad) = solver.monitor() {
                termination = bad;
                break;
            }
        }
    }
    Ok(Trajectory {
        config: config.clone(),
        snapshots,
        termination,
        regrids: solver.regrids.clone(),
        steps: solver.steps,
    })
}
