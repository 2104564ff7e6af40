//! Finite-difference weights on arbitrary nodes.

/// Weights for derivatives `0..=order` at `x0` from nodes `xs` (Fornberg).
///
/// Returns `w[k][j]`, the weight of node `j` in the `k`-th derivative.
pub fn fornberg(x0: f64, xs: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Central weights for the first and second derivative on a uniform grid of
/// spacing 1 with `2p + 1` points.
pub fn central_uniform(p: usize) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..=2 * p).map(|j| j as f64 - p as f64).collect();
    let w = fornberg(0.0, &xs, 2);
    (w[1].clone(), w[2].clone())
}
