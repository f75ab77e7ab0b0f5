//! Quadrature helpers shared by the kernel and risk code.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1].
///
/// Nodes are found by Newton iteration on the Legendre recurrence,
/// accurate to machine precision for the orders used here (n <= 64).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss-Legendre rule on `[a, b]` split at the given interior
/// breakpoints. Roughly `total_nodes` nodes are distributed over the pieces
/// proportionally to their length, in panels of `order` nodes.
pub fn composite_rule(
    a: f64,
    b: f64,
    breakpoints: &[f64],
    total_nodes: usize,
    order: usize,
) -> Vec<(f64, f64)> {
    let (gx, gw) = gauss_legendre(order);
    let mut cuts = vec![a];
    cuts.extend(breakpoints.iter().copied().filter(|&c| c > a && c < b));
    cuts.push(b);
    let total_panels = (total_nodes / order).max(cuts.len() - 1);
    let length = b - a;
    let mut out = Vec::with_capacity(total_panels * order);
    for piece in cuts.windows(2) {
        let (lo, hi) = (piece[0], piece[1]);
        let panels = ((total_panels as f64 * (hi - lo) / length).round() as usize).max(1);
        let width = (hi - lo) / panels as f64;
        for p in 0..panels {
            let mid = lo + (p as f64 + 0.5) * width;
            let half = 0.5 * width;
            for (x, w) in gx.iter().zip(&gw) {
                out.push((mid + half * x, half * w));
            }
        }
    }
    out
}

/// Volume of the unit Euclidean ball in `d` dimensions, pi^{d/2} / Gamma(d/2 + 1).
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        2 => PI,
        _ => unit_ball_volume(d - 2) * 2.0 * PI / d as f64,
    }
}

/// Trapezoid rule over uniformly spaced samples.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => step * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 16, 32] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            // degree 2n-1 is exact
            let deg = 2 * n - 2;
            let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            let exact = 2.0 / (deg as f64 + 1.0);
            assert!((approx - exact).abs() < 1e-12, "n={n}: {approx} vs {exact}");
        }
    }

    #[test]
    fn composite_rule_handles_oscillation() {
        // int_0^20 cos(3t) dt = sin(60)/3
        let rule = composite_rule(0.0, 20.0, &[5.0], 512, 16);
        let approx: f64 = rule.iter().map(|(t, w)| w * (3.0 * t).cos()).sum();
        assert!((approx - (60.0f64).sin() / 3.0).abs() < 1e-13);
    }

    #[test]
    fn ball_volumes() {
        assert_eq!(unit_ball_volume(1), 2.0);
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_on_linear_function_is_exact() {
        let v: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        assert!((trapezoid(&v, 0.1) - 0.5).abs() < 1e-14);
    }
}
