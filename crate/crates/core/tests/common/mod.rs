//! Closed-form oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use magflow::ChartPoint;

/// Lengths of straight segments from `x` to lattice translates of `y`.
pub fn lattice_lengths(x: ChartPoint, y: ChartPoint, t_max: f64) -> Vec<f64> {
    let reach = t_max.ceil() as i64 + 1;
    let mut out = Vec::new();
    for i in -reach..=reach {
        for j in -reach..=reach {
            let d = (y.u - x.u + i as f64).hypot(y.v - x.v + j as f64);
            if d <= t_max {
                out.push(d);
            }
        }
    }
    out
}

/// `(launch angle, length)` of every counter-clockwise (`s > 0`) or clockwise
/// circle arc of radius `1/|s|` from `x` to a lattice translate of `y` on the
/// unit torus, including full extra turns.
pub fn circle_arcs(x: ChartPoint, y: ChartPoint, s: f64, t_max: f64) -> Vec<(f64, f64)> {
    let r = 1.0 / s.abs();
    let reach = (2.0 * r).ceil() as i64 + 1;
    let mut out = Vec::new();
    for i in -reach..=reach {
        for j in -reach..=reach {
            let (qx, qy) = (y.u + i as f64, y.v + j as f64);
            let (dx, dy) = (qx - x.u, qy - x.v);
            let d = dx.hypot(dy);
            if d >= 2.0 * r || d == 0.0 {
                continue;
            }
            let (mx, my) = (x.u + 0.5 * dx, x.v + 0.5 * dy);
            let off = (r * r - 0.25 * d * d).sqrt();
            let (nx, ny) = (-dy / d, dx / d);
            for sign in [1.0, -1.0] {
                let (cx, cy) = (mx + sign * off * nx, my + sign * off * ny);
                let a0 = (x.v - cy).atan2(x.u - cx);
                let a1 = (qy - cy).atan2(qx - cx);
                // swept angle in the direction of motion
                let sweep = if s > 0.0 { (a1 - a0).rem_euclid(TAU) } else { (a0 - a1).rem_euclid(TAU) };
                // velocity is the radius vector rotated by ±90°
                let launch = if s > 0.0 { a0 + PI / 2.0 } else { a0 - PI / 2.0 };
                let mut len = r * sweep;
                while len <= t_max {
                    out.push((launch.rem_euclid(TAU), len));
                    len += TAU * r;
                }
            }
        }
    }
    out
}

/// `2π ∫_0^T |sin t| dt`.
pub fn abs_sin_integral(t: f64) -> f64 {
    let k = (t / PI).floor();
    2.0 * PI * (2.0 * k + 1.0 - (t - k * PI).cos())
}
