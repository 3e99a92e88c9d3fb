//! Grid-search oracle for all-layer margins of the shipped toy nets.

use subshift_core::margins::FeedforwardNet;

pub const POINTS: [[f64; 2]; 7] = [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [-0.5, 1.0], [1.0, 1.5], [-1.0, -0.3], [0.3, -0.9]];

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn top(out: &[f64]) -> usize {
    if out[1] > out[0] { 1 } else { 0 }
}

/// Smallest grid perturbation that moves the prediction off `y` (0-based).
pub fn oracle(net: &FeedforwardNet, x: [f64; 2], y: usize) -> f64 {
    let steps = 400;
    let coord = |i: usize| -2.0 + 4.0 * i as f64 / steps as f64;
    let nx = l2(&x);
    let mut best = f64::INFINITY;
    match net.p {
        1 => {
            let w = &net.weights[0];
            for i in 0..=steps {
                for j in 0..=steps {
                    let d = [coord(i), coord(j)];
                    let out = [w[0] * x[0] + w[1] * x[1] + d[0] * nx, w[2] * x[0] + w[3] * x[1] + d[1] * nx];
                    if top(&out) != y {
                        best = best.min(l2(&d));
                    }
                }
            }
        }
        2 => {
            let (w1, w2) = (&net.weights[0], &net.weights[1]);
            for i in 0..=steps {
                for j in 0..=steps {
                    let (d1, d2) = (coord(i), coord(j));
                    let h1 = w1[0] * x[0] + w1[1] * x[1] + d1 * nx;
                    let h2 = h1.max(0.0) + d2 * h1.abs();
                    let base = [w2[0] * h2, w2[1] * h2];
                    // last layer: cheapest δ_3 closing the gap, in closed form
                    let d3 = if h2 == 0.0 {
                        if y != 0 { 0.0 } else { f64::INFINITY }
                    } else {
                        (base[y] - base[1 - y]).max(0.0) / (std::f64::consts::SQRT_2 * h2.abs())
                    };
                    best = best.min((d1 * d1 + d2 * d2 + d3 * d3).sqrt());
                }
            }
        }
        _ => unreachable!("toy nets have p ≤ 2"),
    }
    best
}
