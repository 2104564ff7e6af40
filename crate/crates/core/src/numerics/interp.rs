//! Interpolation on sorted 1D grids.

/// Index `i` with `xs[i] <= x < xs[i+1]`, clamped to valid segments.
pub fn segment(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    debug_assert!(n >= 2);
    let i = xs.partition_point(|v| *v <= x);
    i.saturating_sub(1).min(n - 2)
}

/// Quintic Hermite interpolation from values, first and second derivatives.
///
/// Returns `(f, f', f'')` at `x`.
pub fn quintic_hermite(xs: &[f64], f: &[f64], d: &[f64], s: &[f64], x: f64) -> (f64, f64, f64) {
    let i = segment(xs, x);
    let h = xs[i + 1] - xs[i];
    let t = (x - xs[i]) / h;
    let (f0, f1) = (f[i], f[i + 1]);
    let (d0, d1) = (h * d[i], h * d[i + 1]);
    let (s0, s1) = (h * h * s[i], h * h * s[i + 1]);
    let c0 = f0;
    let c1 = d0;
    let c2 = 0.5 * s0;
    let c3 = -10.0 * f0 - 6.0 * d0 - 1.5 * s0 + 10.0 * f1 - 4.0 * d1 + 0.5 * s1;
    let c4 = 15.0 * f0 + 8.0 * d0 + 1.5 * s0 - 15.0 * f1 + 7.0 * d1 - s1;
    let c5 = -6.0 * f0 - 3.0 * d0 - 0.5 * s0 + 6.0 * f1 - 3.0 * d1 + 0.5 * s1;
    let p = c0 + t * (c1 + t * (c2 + t * (c3 + t * (c4 + t * c5))));
    let dp = c1 + t * (2.0 * c2 + t * (3.0 * c3 + t * (4.0 * c4 + t * 5.0 * c5)));
    let ddp = 2.0 * c2 + t * (6.0 * c3 + t * (12.0 * c4 + t * 20.0 * c5));
    (p, dp / h, ddp / (h * h))
}

/// Local Lagrange interpolation through `npts` nodes around `x`.
pub fn lagrange(xs: &[f64], ys: &[f64], x: f64, npts: usize) -> f64 {
    let n = xs.len();
    let npts = npts.min(n);
    let i = segment(xs, x);
    let half = npts / 2;
    let start = (i + 1).saturating_sub(half).min(n - npts);
    let mut acc = 0.0;
    for j in start..start + npts {
        let mut l = 1.0;
        for k in start..start + npts {
            if k != j {
                l *= (x - xs[k]) / (xs[j] - xs[k]);
            }
        }
        acc += l * ys[j];
    }
    acc
}

/// Local Lagrange interpolation on the uniform index grid `0, 1, ..., n-1`
/// at the fractional position `xi`, with values outside `[0, n)` supplied by
/// `ghost` (used for reflection symmetry at the left end).
pub fn lagrange_index(ys: &[f64], xi: f64, npts: usize, ghost: impl Fn(isize) -> f64) -> f64 {
    let n = ys.len() as isize;
    let base = xi.floor() as isize;
    let half = (npts / 2) as isize;
    let mut start = base + 1 - half;
    if start + npts as isize > n {
        start = n - npts as isize;
    }
    let mut acc = 0.0;
    for j in start..start + npts as isize {
        let mut l = 1.0;
        for k in start..start + npts as isize {
            if k != j {
                l *= (xi - k as f64) / ((j - k) as f64);
            }
        }
        let v = if j < 0 || j >= n { ghost(j) } else { ys[j as usize] };
        acc += l * v;
    }
    acc
}
