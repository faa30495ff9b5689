//! Quadrature primitives shared by the operator discretization and the
//! diagnostics: Gauss–Legendre rules and exact-in-the-radial-variable masses
//! of lattice cells clipped to an annulus.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
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

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// A Gauss–Legendre rule mapped to an interval.
pub fn gauss_on(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    x.iter()
        .zip(&w)
        .map(|(xi, wi)| (mid + half * xi, half * wi))
        .collect()
}

/// Integrates `f` over `[a, b]` with `panels` equal Gauss panels of `order` nodes.
pub fn composite_gauss(a: f64, b: f64, panels: usize, order: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_legendre(order);
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            s += wi * f(mid + 0.5 * width * xi);
        }
        total += 0.5 * width * s;
    }
    total
}

/// Radial antiderivative of `|y|^{-n-s}` against the polar measure; identical
/// in one and two dimensions: `-r^{-s}/s`.
pub fn kernel_antiderivative(s: f64) -> impl Fn(f64) -> f64 {
    move |r: f64| {
        if r.is_infinite() {
            0.0
        } else {
            -r.powf(-s) / s
        }
    }
}

/// Mass of the 1D cell `[c - h/2, c + h/2]` intersected with
/// `{r_lo <= |x| < r_hi}`, for a radial density whose antiderivative in `r` is `phi`.
pub fn cell_mass_1d(center: f64, h: f64, r_lo: f64, r_hi: f64, phi: &dyn Fn(f64) -> f64) -> f64 {
    let a = center - 0.5 * h;
    let b = center + 0.5 * h;
    let mut mass = 0.0;
    // positive half-line
    let lo = a.max(0.0).max(r_lo);
    let hi = b.min(r_hi);
    if hi > lo {
        mass += phi(hi) - phi(lo);
    }
    // negative half-line, mirrored
    let lo = (-b).max(0.0).max(r_lo);
    let hi = (-a).min(r_hi);
    if hi > lo {
        mass += phi(hi) - phi(lo);
    }
    mass
}

const CELL_ANGULAR_ORDER: usize = 12;

/// Mass of the square cell centred at `center` with side `h`, intersected with
/// the annulus `{r_lo <= |x| < r_hi}`, for a radial density whose polar
/// antiderivative (`∫ f(r) r dr`) is `phi`.
///
/// The radial integral is exact; the angular integral uses Gauss panels split
/// at every corner direction and every circle/edge crossing, so the integrand
/// is analytic on each panel.
pub fn cell_mass_2d(center: [f64; 2], h: f64, r_lo: f64, r_hi: f64, phi: &dyn Fn(f64) -> f64) -> f64 {
    let a = 0.5 * h;
    let corners = [
        [center[0] - a, center[1] - a],
        [center[0] + a, center[1] - a],
        [center[0] + a, center[1] + a],
        [center[0] - a, center[1] + a],
    ];
    let contains_origin = center[0].abs() < a && center[1].abs() < a;
    if !contains_origin {
        // quick rejection against the annulus
        let near = closest_distance(center, a);
        let far = corners.iter().map(|c| c[0].hypot(c[1])).fold(0.0, f64::max);
        if near >= r_hi || far <= r_lo {
            return 0.0;
        }
    }

    let (base, span) = if contains_origin {
        (0.0, 2.0 * PI)
    } else {
        let theta_c = center[1].atan2(center[0]);
        let rel: Vec<f64> = corners
            .iter()
            .map(|c| wrap(c[1].atan2(c[0]) - theta_c))
            .collect();
        let lo = rel.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = rel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (theta_c + lo, hi - lo)
    };

    let mut breaks = vec![0.0, span];
    let mut push = |theta: f64| {
        let t = if contains_origin {
            (theta - base).rem_euclid(2.0 * PI)
        } else {
            wrap(theta - base - 0.5 * span) + 0.5 * span
        };
        if t > 0.0 && t < span {
            breaks.push(t);
        }
    };
    for c in &corners {
        push(c[1].atan2(c[0]));
    }
    for r in [r_lo, r_hi] {
        if !(r.is_finite() && r > 0.0) {
            continue;
        }
        for (axis, fixed) in [(0usize, center[0] - a), (0, center[0] + a), (1, center[1] - a), (1, center[1] + a)] {
            if r * r < fixed * fixed {
                continue;
            }
            let other = (r * r - fixed * fixed).sqrt();
            let (olo, ohi) = if axis == 0 {
                (center[1] - a, center[1] + a)
            } else {
                (center[0] - a, center[0] + a)
            };
            for o in [other, -other] {
                if o >= olo && o <= ohi {
                    let p = if axis == 0 { [fixed, o] } else { [o, fixed] };
                    push(p[1].atan2(p[0]));
                }
            }
        }
    }
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-15);

    let (gx, gw) = gauss_legendre(CELL_ANGULAR_ORDER);
    let mut total = 0.0;
    for pair in breaks.windows(2) {
        let (t0, t1) = (pair[0], pair[1]);
        let half = 0.5 * (t1 - t0);
        if half <= 0.0 {
            continue;
        }
        let mid = 0.5 * (t0 + t1);
        let mut s = 0.0;
        for (xi, wi) in gx.iter().zip(&gw) {
            let theta = base + mid + half * xi;
            let dir = [theta.cos(), theta.sin()];
            if let Some((t_in, t_out)) = ray_box(dir, center, a) {
                let lo = t_in.max(r_lo);
                let hi = t_out.min(r_hi);
                if hi > lo {
                    s += wi * (phi(hi) - phi(lo));
                }
            }
        }
        total += half * s;
    }
    total
}

fn wrap(t: f64) -> f64 {
    let mut t = t.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

fn closest_distance(center: [f64; 2], a: f64) -> f64 {
    let dx = (center[0].abs() - a).max(0.0);
    let dy = (center[1].abs() - a).max(0.0);
    dx.hypot(dy)
}

/// Parameter interval `[t_in, t_out]` (with `t >= 0`) where the ray `t * dir`
/// lies in the axis-aligned square of half-side `a` around `center`.
fn ray_box(dir: [f64; 2], center: [f64; 2], a: f64) -> Option<(f64, f64)> {
    let mut t_in: f64 = 0.0;
    let mut t_out = f64::INFINITY;
    for i in 0..2 {
        let (lo, hi) = (center[i] - a, center[i] + a);
        if dir[i].abs() < 1e-300 {
            if lo > 0.0 || hi < 0.0 {
                return None;
            }
            continue;
        }
        let (mut t1, mut t2) = (lo / dir[i], hi / dir[i]);
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
        }
        t_in = t_in.max(t1);
        t_out = t_out.min(t2);
    }
    if t_out > t_in {
        Some((t_in, t_out))
    } else {
        None
    }
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r_squared, stderr_b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let stderr = if x.len() > 2 && sxx > 0.0 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (intercept, slope, r2, stderr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 8, 16, 33] {
            let (x, w) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let approx: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((approx - exact).abs() < 1e-13, "n={n}: {approx} vs {exact}");
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn cell_masses_tile_annulus_1d() {
        let (h, s, r_lo, r_hi) = (0.125, 1.3, 0.25, 4.0);
        let phi = kernel_antiderivative(s);
        let total: f64 = (-40..=40)
            .map(|k| cell_mass_1d(k as f64 * h, h, r_lo, r_hi, &phi))
            .sum();
        let exact = 2.0 * (phi(r_hi) - phi(r_lo));
        assert!((total - exact).abs() < 1e-12 * exact.abs());
    }

    #[test]
    fn cell_masses_tile_annulus_2d() {
        let (h, s, r_lo, r_hi) = (0.25, 1.5, 0.5, 2.0);
        let phi = kernel_antiderivative(s);
        let mut total = 0.0;
        for i in -10..=10 {
            for j in -10..=10 {
                total += cell_mass_2d([i as f64 * h, j as f64 * h], h, r_lo, r_hi, &phi);
            }
        }
        let exact = 2.0 * PI * (phi(r_hi) - phi(r_lo));
        assert!((total - exact).abs() < 1e-10 * exact.abs(), "{total} vs {exact}");
    }

    #[test]
    fn cell_containing_origin_has_area_mass() {
        let phi = |r: f64| 0.5 * r * r; // density 1
        let m = cell_mass_2d([0.0, 0.0], 0.5, 0.0, f64::INFINITY, &phi);
        assert!((m - 0.25).abs() < 1e-12);
        let m = cell_mass_2d([0.75, -0.25], 0.5, 0.0, f64::INFINITY, &phi);
        assert!((m - 0.25).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 0.5 * v).collect();
        let (a, b, r2, se) = linear_fit(&x, &y);
        assert!((a - 1.5).abs() < 1e-14 && (b + 0.5).abs() < 1e-14);
        assert!((r2 - 1.0).abs() < 1e-14 && se < 1e-14);
    }
}
