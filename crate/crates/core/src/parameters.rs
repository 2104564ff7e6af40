//! Constants derived from the half-dimension `n`.
//!
//! Everything here is a closed-form function of `n`. The two free exponents
//! `varsigma` and `vartheta` only need to lie in open intervals; they are fixed
//! by a midpoint rule (see [`derive_parameters`]).

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};

/// All scalar constants for a given `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub n: u32,
    pub alpha: f64,
    pub alpha_bar: f64,
    /// `lambda[i] = -(1 - alpha)/2 + i`.
    pub lambda: Vec<f64>,
    pub sigma: f64,
    pub upsilon1: f64,
    pub upsilon2: f64,
    /// `None` when the admissible interval is empty (only `n = 4`).
    pub varsigma: Option<f64>,
    pub vartheta: Option<f64>,
    pub varkappa: Option<f64>,
    pub varrho: Option<f64>,
}

/// Open interval `(lo, hi)`; empty when `lo >= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// The two roots of `a(a-1) + 2(n-1)(a+1) = 0`, larger first.
pub fn alpha_roots(n: u32) -> (f64, f64) {
    let nf = f64::from(n);
    let b = 2.0 * nf - 3.0;
    let disc = 4.0 * nf * nf - 20.0 * nf + 17.0;
    let sq = disc.sqrt();
    // The larger root suffers cancellation; recover it from the product of roots.
    let small = (-b - sq) / 2.0;
    let large = 2.0 * (nf - 1.0) / small;
    (large, small)
}

/// Residual of the defining quadratic at `a`.
pub fn alpha_residual(n: u32, a: f64) -> f64 {
    a * (a - 1.0) + 2.0 * (f64::from(n) - 1.0) * (a + 1.0)
}

/// Admissible interval for `varsigma`.
pub fn varsigma_interval(n: u32, alpha: f64) -> Interval {
    let nf = f64::from(n);
    let lambda2 = (alpha + 3.0) / 2.0;
    Interval {
        lo: 0.0,
        hi: ((nf + alpha - 2.5) / (1.0 - alpha)).min(1.0 / lambda2),
    }
}

/// Admissible interval for `vartheta` given `varsigma`.
pub fn vartheta_interval(n: u32, alpha: f64, varsigma: f64) -> Interval {
    let nf = f64::from(n);
    let sigma = -0.5 + 2.0 / (1.0 - alpha);
    let hi = ((1.0 - alpha) * varsigma / (nf + alpha + 1.5))
        .min((1.0 - alpha) / (2.0 - alpha))
        .min(1.0 / (2.0 * sigma));
    Interval {
        lo: (-1.0 - alpha) / (1.0 - alpha),
        hi,
    }
}

/// Smallest `varsigma` for which the `vartheta` interval is non-empty.
pub fn varsigma_threshold(n: u32, alpha: f64) -> f64 {
    let nf = f64::from(n);
    (-1.0 - alpha) * (nf + alpha + 1.5) / ((1.0 - alpha) * (1.0 - alpha))
}

/// Compute every constant for dimension `n` with `m + 1` eigenvalues.
///
/// `varsigma` is the midpoint between [`varsigma_threshold`] and the upper end
/// of [`varsigma_interval`], and `vartheta` is the midpoint of the resulting
/// [`vartheta_interval`]. Taking half of the `varsigma` upper end instead
/// leaves the `vartheta` interval empty at `n = 5`.
pub fn derive_parameters(n: u32, m: usize) -> Result<Parameters> {
    if n < 4 {
        return precondition(format!("n must be at least 4, got {n}"));
    }
    if m < 3 {
        return precondition(format!("eigen-count m must be at least 3, got {m}"));
    }
    let nf = f64::from(n);
    let (alpha, alpha_bar) = alpha_roots(n);
    let lambda: Vec<f64> = (0..=m).map(|i| -(1.0 - alpha) / 2.0 + i as f64).collect();
    let sigma = -0.5 + 2.0 / (1.0 - alpha);
    let b = nf + alpha - 0.5;
    let upsilon1 = -1.0 / (4.0 * b);
    let upsilon2 = 1.0 / (16.0 * b * (b + 1.0));

    let lambda2 = lambda[2];
    let s_int = varsigma_interval(n, alpha);
    let s_lo = varsigma_threshold(n, alpha).max(s_int.lo);
    let (varsigma, vartheta, varkappa, varrho) = if s_lo < s_int.hi {
        let vs = 0.5 * (s_lo + s_int.hi);
        let t_int = vartheta_interval(n, alpha, vs);
        if t_int.is_empty() {
            (None, None, None, None)
        } else {
            let vt = t_int.midpoint();
            let vk = (vs * lambda2 - vt * sigma * (nf + alpha + 1.5))
                .min(vs * lambda2 / 2.0)
                .min(2.0 * (lambda2 + (alpha - 2.0) * vt * sigma));
            let vr = 1.0 - (1.0 - alpha) * (1.0 - vt) / 2.0;
            (Some(vs), Some(vt), Some(vk), Some(vr))
        }
    } else {
        (None, None, None, None)
    };

    Ok(Parameters {
        n,
        alpha,
        alpha_bar,
        lambda,
        sigma,
        upsilon1,
        upsilon2,
        varsigma,
        vartheta,
        varkappa,
        varrho,
    })
}

impl Parameters {
    pub fn new(n: u32) -> Result<Self> {
        derive_parameters(n, 6)
    }

    pub fn nf(&self) -> f64 {
        f64::from(self.n)
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda[2]
    }

    /// `n + alpha - 1/2`, the Kummer `b` parameter.
    pub fn kummer_b(&self) -> f64 {
        self.nf() + self.alpha - 0.5
    }

    /// Tip length scale `(-t)^(1/2 + sigma)`.
    pub fn tip_scale(&self, minus_t: f64) -> f64 {
        minus_t.powf(0.5 + self.sigma)
    }

    /// Type II time `1 / (2 sigma (-t)^(2 sigma))`.
    pub fn tau_of(&self, minus_t: f64) -> f64 {
        1.0 / (2.0 * self.sigma * minus_t.powf(2.0 * self.sigma))
    }

    /// Asymptote constant `2^((alpha+1)/2)`.
    pub fn asymptote(&self) -> f64 {
        2f64.powf((self.alpha + 1.0) / 2.0)
    }

    /// Exponent `1/(1-alpha)` of the scaling law.
    pub fn scale_exponent(&self) -> f64 {
        1.0 / (1.0 - self.alpha)
    }

    /// Checks every structural identity and returns the failures.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let a = self.alpha;
        let res = alpha_residual(self.n, a);
        if res.abs() > 1e-12 {
            out.push(format!("quadratic residual {res:e}"));
        }
        if !(-2.0..-1.0).contains(&a) {
            out.push(format!("alpha {a} outside [-2,-1)"));
        }
        if !(1.0 / 6.0..0.5).contains(&self.sigma) {
            out.push(format!("sigma {} outside [1/6,1/2)", self.sigma));
        }
        let l = &self.lambda;
        if ((a + 4.0) - (2.0 * l[2] + 1.0)).abs() > 1e-12 {
            out.push("alpha + 4 != 2 lambda2 + 1".into());
        }
        if (self.sigma - l[2] / (1.0 - a)).abs() > 1e-12 {
            out.push("sigma != lambda2/(1-alpha)".into());
        }
        if !(l[0] < 0.0 && l[1] < 0.0 && l[2] > 0.0) {
            out.push("eigenvalue signs".into());
        }
        let nf = self.nf();
        if 4.0 * nf * nf - 20.0 * nf + 17.0 < 1.0 {
            out.push("coercivity constant below 1".into());
        }
        if let (Some(vt), Some(vr)) = (self.vartheta, self.varrho) {
            if !(vr > 0.0 && vr < vt) {
                out.push(format!("varrho {vr} not in (0, {vt})"));
            }
        }
        if let Some(vk) = self.varkappa {
            if vk <= 0.0 {
                out.push(format!("varkappa {vk} not positive"));
            }
        }
        out
    }
}
