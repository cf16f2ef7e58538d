//! Quadrature helpers: exact cell integrals of `|z|^s`, Gauss-Legendre rules,
//! and endpoint-corrected trapezoid sums.

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    for i in 0..order {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(order, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(order, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre(order: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=order {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn log_term(a: f64, b: f64, c: f64, r: f64) -> f64 {
    // b c ln(a + r), written to avoid cancellation for a < 0.
    if b * c == 0.0 {
        0.0
    } else if a >= 0.0 {
        b * c * (a + r).ln()
    } else {
        b * c * ((b * b + c * c) / (r - a)).ln()
    }
}

fn atan_term(a: f64, b: f64, c: f64, r: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        0.5 * a * a * (b * c / (a * r)).atan()
    }
}

fn corner_antiderivative(x: f64, y: f64, z: f64) -> f64 {
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    log_term(x, y, z, r) + log_term(y, x, z, r) + log_term(z, x, y, r)
        - atan_term(x, y, z, r)
        - atan_term(y, x, z, r)
        - atan_term(z, x, y, r)
}

/// Exact `∫_box 1/|z| dz` for the axis-aligned box `[lo, hi]`.
pub fn box_inverse_distance(lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut total = 0.0;
    for corner in 0..8 {
        let pick = |axis: usize| if corner >> axis & 1 == 1 { hi[axis] } else { lo[axis] };
        let sign = if (corner as u32).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
        total += sign * corner_antiderivative(pick(0), pick(1), pick(2));
    }
    // Three sign flips relative to the all-hi corner.
    -total
}

/// `∫_box |z|^s dz` for a box containing the origin and `s > −3`, by splitting
/// the box into six pyramids with apex at the origin and integrating each
/// base face with a tensor Gauss-Legendre rule.
pub fn box_power_integral(lo: [f64; 3], hi: [f64; 3], s: f64) -> f64 {
    debug_assert!(s > -3.0);
    debug_assert!((0..3).all(|a| lo[a] <= 0.0 && hi[a] >= 0.0));
    let (nodes, weights) = gauss_legendre(24);
    let mut total = 0.0;
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for d in [hi[axis], -lo[axis]] {
            if d <= 0.0 {
                continue;
            }
            let mut face = 0.0;
            // Split at the foot of the perpendicular so the peak sits on a corner.
            for (ub0, ub1) in [(lo[b], 0.0), (0.0, hi[b])] {
                for (vc0, vc1) in [(lo[c], 0.0), (0.0, hi[c])] {
                    if ub1 <= ub0 || vc1 <= vc0 {
                        continue;
                    }
                    let (hu, mu) = (0.5 * (ub1 - ub0), 0.5 * (ub1 + ub0));
                    let (hv, mv) = (0.5 * (vc1 - vc0), 0.5 * (vc1 + vc0));
                    for (xu, wu) in nodes.iter().zip(&weights) {
                        let u = mu + hu * xu;
                        for (xv, wv) in nodes.iter().zip(&weights) {
                            let v = mv + hv * xv;
                            face += wu * wv * hu * hv * (d * d + u * u + v * v).powf(0.5 * s);
                        }
                    }
                }
            }
            total += d / (s + 3.0) * face;
        }
    }
    total
}

/// Exact `∫ |z|^s` over the cube of side `h` centered at `offset`, which must
/// contain the origin unless `s = −1`.
pub fn cell_power_integral(offset: [f64; 3], h: f64, s: f64) -> f64 {
    let lo = offset.map(|o| o - 0.5 * h);
    let hi = offset.map(|o| o + 0.5 * h);
    if s == -1.0 {
        box_inverse_distance(lo, hi)
    } else {
        box_power_integral(lo, hi, s)
    }
}

/// Trapezoid sum over possibly non-uniform nodes.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Trapezoid sum with the Euler-Maclaurin end corrections
/// `−(h²/12)(f'(b) − f'(a))`, applied on every maximal run of equal spacing.
/// `derivs` holds `f'` at each node. Fourth order for smooth integrands.
pub fn corrected_trapezoid(times: &[f64], values: &[f64], derivs: &[f64]) -> f64 {
    let n = times.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = trapezoid(times, values);
    let mut start = 0;
    while start + 1 < n {
        let h = times[start + 1] - times[start];
        let mut end = start + 1;
        while end + 1 < n && same_spacing(times[end + 1] - times[end], h) {
            end += 1;
        }
        total -= h * h / 12.0 * (derivs[end] - derivs[start]);
        start = end;
    }
    total
}

/// Trapezoid integral of the piecewise-linear interpolant of `(times, values)`
/// over `[a, b]`, which must lie within the sampled range.
pub fn windowed_trapezoid(times: &[f64], values: &[f64], a: f64, b: f64) -> f64 {
    if times.is_empty() || b <= a {
        return 0.0;
    }
    let interp = |t: f64| -> f64 {
        let i = times.partition_point(|&x| x <= t);
        if i == 0 {
            return values[0];
        }
        if i >= times.len() {
            return values[times.len() - 1];
        }
        let (t0, t1) = (times[i - 1], times[i]);
        let w = (t - t0) / (t1 - t0);
        values[i - 1] + w * (values[i] - values[i - 1])
    };
    let mut nodes = vec![(a, interp(a))];
    for (&t, &v) in times.iter().zip(values) {
        if t > a && t < b {
            nodes.push((t, v));
        }
    }
    nodes.push((b, interp(b)));
    nodes
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

fn same_spacing(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT_CUBE_CENTERED: f64 = 2.380_077_363_979_552;

    #[test]
    fn centered_cube_constant() {
        // 8 × (1/4) × [(3/2) ln((√3+1)/(√3−1)) − π/4]
        let s3 = 3.0_f64.sqrt();
        let corner = 1.5 * ((s3 + 1.0) / (s3 - 1.0)).ln() - std::f64::consts::FRAC_PI_4;
        assert!((2.0 * corner - UNIT_CUBE_CENTERED).abs() < 1e-12);
        assert!((box_inverse_distance([-0.5; 3], [0.5; 3]) - UNIT_CUBE_CENTERED).abs() < 1e-12);
        let h = 0.3;
        assert!((cell_power_integral([0.0; 3], h, -1.0) - UNIT_CUBE_CENTERED * h * h).abs() < 1e-13);
    }

    #[test]
    fn pyramid_rule_matches_closed_form() {
        for (lo, hi) in [
            ([-0.5; 3], [0.5; 3]),
            ([-0.2, -0.7, -0.1], [0.8, 0.3, 1.3]),
            ([0.0, -0.4, -0.25], [0.5, 0.6, 0.75]),
        ] {
            let a = box_power_integral(lo, hi, -1.0);
            let b = box_inverse_distance(lo, hi);
            assert!((a - b).abs() < 1e-9 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn power_rule_polynomial_case() {
        // ∫ |z|² over the centered unit cube is 3 · (1/12).
        let v = box_power_integral([-0.5; 3], [0.5; 3], 2.0);
        assert!((v - 0.25).abs() < 1e-13);
        let one = box_power_integral([-0.3, -0.2, -0.6], [0.7, 0.8, 0.4], 0.0);
        assert!((one - 1.0).abs() < 1e-13);
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn window_of_linear_data_is_exact() {
        let t = [0.0, 0.5, 1.0, 1.5];
        let f = t.map(|x| 2.0 * x + 1.0);
        let exact = |a: f64, b: f64| (b * b + b) - (a * a + a);
        for (a, b) in [(0.2, 1.3), (0.0, 1.5), (0.5, 1.0), (0.7, 0.9)] {
            assert!((windowed_trapezoid(&t, &f, a, b) - exact(a, b)).abs() < 1e-14);
        }
    }

    #[test]
    fn corrected_trapezoid_is_fourth_order() {
        let err = |n: usize| {
            let t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let f: Vec<f64> = t.iter().map(|t| (3.0 * t).sin()).collect();
            let d: Vec<f64> = t.iter().map(|t| 3.0 * (3.0 * t).cos()).collect();
            (corrected_trapezoid(&t, &f, &d) - (1.0 - 3.0_f64.cos()) / 3.0).abs()
        };
        let ratio = err(20) / err(40);
        assert!(ratio > 14.0 && ratio < 18.0, "{ratio}");
    }
}
