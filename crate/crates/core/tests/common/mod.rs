//! Dense 1D reference quadrature, independent of the lattice stencil.
#![allow(dead_code)]

const XK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WK[7] * fc;
    let mut g = WG[3] * fc;
    let mut abs = WK[7] * fc.abs();
    for i in 0..7 {
        let x = h * XK[i];
        let (l, r) = (f(c - x), f(c + x));
        k += WK[i] * (l + r);
        abs += WK[i] * (l.abs() + r.abs());
        if i % 2 == 1 {
            g += WG[i / 2] * (l + r);
        }
    }
    (k * h, ((k - g) * h).abs(), abs * h)
}

/// Adaptive Gauss–Kronrod 7/15 with absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, e, abs) = gk15(f, a, b);
        // stop at the tolerance or at the rounding floor of the integrand
        if e <= tol || e <= 1e-13 * abs || depth > 50 || (b - a) < 1e-15 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

/// Integral over `[a, b]` split at the given interior breakpoints.
pub fn integrate_split(f: &dyn Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|p| *p > a && *p < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.windows(2).map(|w| integrate(f, w[0], w[1], tol)).sum()
}

/// `(2-σ) ∫_{-∞}^{∞} g(δ(y), y) |y|^{-1-σ} dy` in 1D for an integrand `g`
/// vanishing like `δ` at `y = 0`, where `δ(y) = u(x+y) + u(x-y) - 2u(x)`
/// (only `y > 0` is integrated, then doubled).
pub fn nonlocal_1d(
    u: &dyn Fn(f64) -> f64,
    g: &dyn Fn(f64, f64) -> f64,
    x: f64,
    sigma: f64,
    kinks: &[f64],
) -> f64 {
    let two = 2.0 - sigma;
    let ux = u(x);
    let delta = |y: f64| u(x + y) + u(x - y) - 2.0 * ux;
    // near zero: s = y^{2-σ} turns (2-σ) y^{-1-σ} dy into y^{-2} ds; below
    // ymin the quotient g/y² is replaced by its even Taylor fit A + B y²
    let y0: f64 = 0.05;
    let ymin: f64 = 1e-2;
    let q = |y: f64| g(delta(y), y) / (y * y);
    let near_integrand = |s: f64| q(s.powf(1.0 / two));
    let (q1, q2) = (q(ymin), q(2.0 * ymin));
    let b = (q2 - q1) / (3.0 * ymin * ymin);
    let a = q1 - b * ymin * ymin;
    let smin = ymin.powf(two);
    let e = 2.0 / two;
    let near = a * smin + b * smin.powf(1.0 + e) / (1.0 + e) + integrate(&near_integrand, smin, y0.powf(two), 1e-13);
    // middle range with breakpoints at |x ± y| = kink
    let ytop: f64 = 50.0;
    let mut breaks = Vec::new();
    for k in kinks {
        breaks.push((k - x).abs());
        breaks.push((k + x).abs());
    }
    let mid_integrand = |y: f64| two * g(delta(y), y) * y.powf(-1.0 - sigma);
    let mid = integrate_split(&mid_integrand, y0, ytop, &breaks, 1e-13);
    // tail: s = y^{-σ}
    let tail_integrand = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        let y = s.powf(-1.0 / sigma);
        two * g(delta(y), y) / sigma
    };
    let tail = integrate(&tail_integrand, 0.0, ytop.powf(-sigma), 1e-14);
    2.0 * (near + mid + tail)
}

/// Linear operator with coefficient `a(y)`.
pub fn linear_1d(u: &dyn Fn(f64) -> f64, a: &dyn Fn(f64) -> f64, x: f64, sigma: f64, kinks: &[f64]) -> f64 {
    nonlocal_1d(u, &|d, y| a(y) * d, x, sigma, kinks)
}

pub fn ball_profile(s: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| if x.abs() < 1.0 { (1.0 - x * x).powf(s) } else { 0.0 }
}

pub fn bump(c: f64, r: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| {
        let t = (x - c) / r;
        if t.abs() < 1.0 {
            (1.0 - 1.0 / (1.0 - t * t)).exp()
        } else {
            0.0
        }
    }
}

/// Closed form of `(2-σ) ∫ δ₂ (1-x²)₊^{σ/2} |y|^{-1-σ} dy` inside the ball.
pub fn ball_profile_exact(sigma: f64) -> f64 {
    use statrs::function::gamma::gamma;
    let s = sigma / 2.0;
    let k = 4f64.powf(s) * gamma(1.0 + s) * gamma(0.5 + s) / gamma(0.5);
    let c = 4f64.powf(s) * gamma(0.5 + s) / (std::f64::consts::PI.sqrt() * gamma(-s).abs());
    -(2.0 - sigma) * 2.0 / c * k
}
