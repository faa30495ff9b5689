//! Measured quantities of the regularity theory: difference quotients,
//! the exterior increment seminorm, residuals, Hölder fits and boundary
//! profiles.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{is_interior, Ball, ClosedForm, ExteriorData, Field, Grid, Lattice};
use crate::kernels::WeightSpec;
use crate::numerics::{cell_mass_1d, cell_mass_2d, gauss_on, kernel_antiderivative, linear_fit};
use crate::operators::{Operator, OperatorSpec, Sign};
use crate::{norm, Point};

/// `w_h(x) = (u(x+h) - u(x)) / |h|^β` on the same lattice.
pub fn difference_quotient(u: &Field, h: Lattice, beta: f64) -> Result<Field> {
    let g = u.grid;
    let hv = g.point(h);
    let len = norm(hv);
    if len == 0.0 {
        return Err(Error::usage("difference quotient step must be nonzero"));
    }
    if len > 0.125 + 1e-12 {
        return Err(Error::usage("difference quotient step must satisfy |h| <= 1/8"));
    }
    let scale = len.powf(-beta);
    let values = (0..g.len())
        .map(|i| {
            let k = g.lattice(i);
            (u.lattice_value([k[0] + h[0], k[1] + h[1]]) - u.values[i]) * scale
        })
        .collect();
    let form = ClosedForm::Increment {
        inner: Box::new(u.exterior.form.clone()),
        step: hv,
        beta,
    };
    Field::from_parts(g, values, ExteriorData::new(form)?)
}

/// Lattice steps with `0 < |h| < 1/8`: multiples of the axes in 1D, of the
/// axes and diagonals in 2D.
fn seminorm_steps(g: &Grid) -> Vec<Lattice> {
    let dirs: Vec<Lattice> = if g.dim == 1 {
        vec![[1, 0], [-1, 0]]
    } else {
        vec![[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1], [1, -1], [-1, 1]]
    };
    let mut out = Vec::new();
    for d in dirs {
        let mut m = 1;
        loop {
            let s = [d[0] * m, d[1] * m];
            if norm(g.point(s)) >= 0.125 - 1e-12 {
                break;
            }
            out.push(s);
            m += 1;
        }
    }
    out
}

const TAIL_ORDER: usize = 24;
const TAIL_ANGLES: usize = 64;

/// `sup_h` of [`a_beta_at`] over lattice steps `0 < |h| < 1/8`.
pub fn a_beta_seminorm(u: &Field, beta: f64, sigma0: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::usage("β must lie in (0, 1]"));
    }
    let steps = seminorm_steps(&u.grid);
    let vals: Vec<f64> = steps.par_iter().map(|&s| a_beta_at(u, s, beta, sigma0)).collect();
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// `|h|^{-β} ∫_{|y|>1+2|h|} |u(y+h) - u(y)| |y|^{-n-σ₀} dy` for one lattice
/// step: node values times exact clipped kernel mass per cell inside the box,
/// the exterior closed form beyond it.
pub fn a_beta_at(u: &Field, s: Lattice, beta: f64, sigma0: f64) -> f64 {
    let g = u.grid;
    let phi = kernel_antiderivative(sigma0);
    let edge = g.r_out + 0.5 * g.h;
    let hv = g.point(s);
    let len = norm(hv);
    let r0 = 1.0 + 2.0 * len;
    let mut total = 0.0;
    for i in 0..g.len() {
        let k = g.lattice(i);
        let c = g.point(k);
        let mass = if g.dim == 1 {
            // one side of the line at a time
            if c[0] == 0.0 {
                0.0
            } else {
                cell_mass_1d(c[0].abs(), g.h, r0, edge, &phi)
            }
        } else {
            cell_mass_2d(c, g.h, r0, edge, &phi)
        };
        if mass > 0.0 {
            total += mass * (u.lattice_value([k[0] + s[0], k[1] + s[1]]) - u.values[i]).abs();
        }
    }
    // beyond the box: r = t^{-1/σ₀}, t ∈ (0, edge^{-σ₀}]
    let incr = |y: Point| (u.value_at([y[0] + hv[0], y[1] + hv[1]]) - u.value_at(y)).abs();
    for (t, w) in gauss_on(0.0, edge.powf(-sigma0), TAIL_ORDER) {
        let r = t.powf(-1.0 / sigma0);
        if g.dim == 1 {
            total += w / sigma0 * (incr([r, 0.0]) + incr([-r, 0.0]));
        } else {
            let dth = 2.0 * std::f64::consts::PI / TAIL_ANGLES as f64;
            for a in 0..TAIL_ANGLES {
                let th = (a as f64 + 0.5) * dth;
                total += w / sigma0 * dth * incr([r * th.cos(), r * th.sin()]);
            }
        }
    }
    total * len.powf(-beta)
}

/// Pointwise residual `I(u, x) - f(x)` on the interior nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Residual {
    pub sup: f64,
    pub argmax: usize,
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn residual(spec: &OperatorSpec, u: &Field, f: &Field) -> Result<Residual> {
    if f.grid != u.grid {
        return Err(Error::usage("residual needs fields on one grid"));
    }
    let op = Operator::new(spec, u.grid)?;
    let (nodes, vals) = op.eval_interior(u)?;
    let values: Vec<f64> = vals.iter().zip(&nodes).map(|(v, &i)| v - f.values[i]).collect();
    let mut sup = 0.0;
    let mut argmax = nodes.first().copied().unwrap_or(0);
    for (v, &i) in values.iter().zip(&nodes) {
        if v.abs() > sup {
            sup = v.abs();
            argmax = i;
        }
    }
    Ok(Residual {
        sup,
        argmax,
        nodes,
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub scale: f64,
    pub max_increment: f64,
    pub fit_residual: f64,
}

/// Least-squares fit of `log max increment` against `log |h|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    /// Fitted slope: the Hölder exponent for `d = 0`, `1 + α` for `d = 1`.
    pub exponent: f64,
    pub constant: f64,
    pub r_squared: f64,
    pub stderr: f64,
    /// All increments vanish; the fit is reported as zeros.
    pub degenerate: bool,
    pub table: Vec<ScaleRow>,
}

impl HolderFit {
    /// 95% normal confidence interval of the exponent.
    pub fn interval(&self) -> (f64, f64) {
        (self.exponent - 1.96 * self.stderr, self.exponent + 1.96 * self.stderr)
    }
}

fn axes(dim: usize) -> Vec<Lattice> {
    if dim == 1 {
        vec![[1, 0]]
    } else {
        vec![[1, 0], [0, 1]]
    }
}

fn region_nodes(g: &Grid, region: &Ball) -> Vec<usize> {
    (0..g.len()).filter(|&i| region.contains(g.node_point(i))).collect()
}

/// Dyadic scales `start · 2^k` below `max`, at least `count` of them when the
/// lattice allows; `start` is `4h` unless that leaves too few.
pub fn dyadic_scales(g: &Grid, max: f64, count: usize) -> Vec<f64> {
    let mut start = 4.0 * g.h;
    while start > g.h && start * 2f64.powi(count as i32 - 1) > max * (1.0 + 1e-12) {
        start *= 0.5;
    }
    let mut out = Vec::new();
    let mut s = start;
    while s <= max * (1.0 + 1e-12) {
        out.push(s);
        s *= 2.0;
    }
    out
}

/// Exponent fit of first (`d = 0`) or second (`d = 1`) increments over the
/// nodes of `region`. Scales are rounded to lattice multiples.
pub fn holder_fit(u: &Field, region: &Ball, d: usize, scales: &[f64]) -> Result<HolderFit> {
    if d > 1 {
        return Err(Error::usage("derivative order must be 0 or 1"));
    }
    let g = u.grid;
    let mut steps: Vec<i64> = scales.iter().map(|s| (s / g.h).round().max(1.0) as i64).collect();
    steps.dedup();
    if steps.len() < 4 {
        return Err(Error::usage(format!("holder_fit needs at least 4 resolvable scales, got {}", steps.len())));
    }
    if region.radius + norm(region.center) > 1.0 + 1e-12 {
        return Err(Error::usage("fit region must lie in the unit ball"));
    }
    let nodes = region_nodes(&g, region);
    if nodes.is_empty() {
        return Err(Error::usage("fit region contains no lattice nodes"));
    }
    let maxima: Vec<f64> = steps
        .par_iter()
        .map(|&m| {
            let mut best: f64 = 0.0;
            for &i in &nodes {
                let k = g.lattice(i);
                for e in axes(g.dim) {
                    let p = u.lattice_value([k[0] + m * e[0], k[1] + m * e[1]]);
                    let q = u.lattice_value([k[0] - m * e[0], k[1] - m * e[1]]);
                    let v = if d == 0 {
                        (p - u.values[i]).abs().max((q - u.values[i]).abs())
                    } else {
                        (p - 2.0 * u.values[i] + q).abs()
                    };
                    best = best.max(v);
                }
            }
            best
        })
        .collect();
    let sc: Vec<f64> = steps.iter().map(|m| *m as f64 * g.h).collect();
    let pts: Vec<(f64, f64)> = sc
        .iter()
        .zip(&maxima)
        .filter(|(_, m)| **m > 0.0)
        .map(|(s, m)| (s.ln(), m.ln()))
        .collect();
    if pts.len() < 2 {
        return Ok(HolderFit {
            exponent: 0.0,
            constant: 0.0,
            r_squared: 0.0,
            stderr: 0.0,
            degenerate: true,
            table: sc
                .iter()
                .zip(&maxima)
                .map(|(s, m)| ScaleRow {
                    scale: *s,
                    max_increment: *m,
                    fit_residual: 0.0,
                })
                .collect(),
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (a, b, r2, se) = linear_fit(&x, &y);
    let table = sc
        .iter()
        .zip(&maxima)
        .map(|(s, m)| ScaleRow {
            scale: *s,
            max_increment: *m,
            fit_residual: if *m > 0.0 { m.ln() - (a + b * s.ln()) } else { f64::NAN },
        })
        .collect();
    Ok(HolderFit {
        exponent: b,
        constant: a.exp(),
        r_squared: r2,
        stderr: se,
        degenerate: false,
        table,
    })
}

/// Fit of `Q(d) = max |Δ| / |h|^β` over pairs at boundary distance `≈ d`
/// against `C d^{s-β}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileFit {
    /// Largest grid value not above the fitted exponent.
    pub s: f64,
    /// Unrounded fitted exponent.
    pub s_fit: f64,
    /// Smallest `C` valid on every enumerated pair for this `s`.
    pub constant: f64,
    pub r_squared: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryProfile {
    pub increments: ProfileFit,
    /// `|∇u(x+h) - ∇u(x)| ≤ C |h|^{α'} (1-|x|)^{s-α'-1}` with centred gradients.
    pub gradients: Option<ProfileFit>,
}

fn centred_gradient(u: &Field, k: Lattice) -> Point {
    let g = u.grid;
    let mut out = [0.0; 2];
    for (a, e) in axes(g.dim).into_iter().enumerate() {
        out[a] = (u.lattice_value([k[0] + e[0], k[1] + e[1]]) - u.lattice_value([k[0] - e[0], k[1] - e[1]])) / (2.0 * g.h);
    }
    out
}

fn fit_profile(samples: &[(f64, f64, f64)], e: f64, offset: f64, floor: f64, s_grid: &[f64]) -> Option<ProfileFit> {
    // samples: (distance, |h|, increment / |h|^e), bound C |h|^e d^{s - offset}.
    // For the largest dyadic step of each node, |h| ∈ [d/4, d/2), the raw
    // increment scales like d^{s - offset + e}; shell maxima of those pairs
    // are fitted against d. Distances below `floor` only enter the constant.
    if samples.is_empty() {
        return None;
    }
    let mut shells: std::collections::BTreeMap<i32, (f64, f64)> = Default::default();
    for &(d, len, q) in samples {
        if d < floor || len < 0.25 * d * (1.0 - 1e-12) {
            continue;
        }
        let r = q * len.powf(e);
        let j = d.log2().floor() as i32;
        let slot = shells.entry(j).or_insert((d, 0.0));
        if r > slot.1 {
            *slot = (d, r);
        }
    }
    let top = s_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bottom = s_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let pts: Vec<(f64, f64)> = shells.values().filter(|(_, r)| *r > 0.0).map(|(d, r)| (d.ln(), r.ln())).collect();
    let (s_fit, r2) = if pts.len() < 2 {
        (top, 1.0)
    } else {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let (_, b, r2, _) = linear_fit(&x, &y);
        let flat = y.iter().all(|v| (v - y[0]).abs() <= 1e-9 * (1.0 + y[0].abs()));
        (b + offset - e, if flat { 1.0 } else { r2 })
    };
    let s = s_grid
        .iter()
        .cloned()
        .filter(|s| *s <= s_fit + 1e-9)
        .fold(f64::NEG_INFINITY, f64::max);
    let s = if s.is_finite() { s } else { bottom };
    let constant = samples
        .iter()
        .map(|&(d, _, q)| q * d.powf(offset - s))
        .fold(0.0, f64::max);
    Some(ProfileFit {
        s,
        s_fit,
        constant,
        r_squared: r2,
        pairs: samples.len(),
    })
}

/// Boundary profile fits over pairs `(x, h)` with `h` a dyadic multiple of
/// an axis step and `|h| < (1-|x|)/2`, for boundary distances up to 1/2.
pub fn weighted_boundary_profile(u: &Field, beta: f64, alpha_prime: f64, s_grid: &[f64]) -> Result<BoundaryProfile> {
    if s_grid.is_empty() {
        return Err(Error::usage("s-grid must be nonempty"));
    }
    let g = u.grid;
    let mut inc = Vec::new();
    let mut grad = Vec::new();
    for i in g.interior_nodes() {
        let x = g.node_point(i);
        let d = 1.0 - norm(x);
        if d >= 0.5 {
            continue;
        }
        let k = g.lattice(i);
        let mut m = 1i64;
        while (m as f64) * g.h < 0.5 * d {
            let len = m as f64 * g.h;
            for e in axes(g.dim) {
                for sgn in [1, -1] {
                    let q = [k[0] + sgn * m * e[0], k[1] + sgn * m * e[1]];
                    let diff = (u.lattice_value(q) - u.values[i]).abs();
                    inc.push((d, len, diff / len.powf(beta)));
                    // centred gradients only where both stencils are interior
                    let inside = |p: Lattice| {
                        axes(g.dim).iter().all(|a| {
                            is_interior(g.point([p[0] + a[0], p[1] + a[1]])) && is_interior(g.point([p[0] - a[0], p[1] - a[1]]))
                        })
                    };
                    if inside(k) && inside(q) {
                        let (ga, gb) = (centred_gradient(u, k), centred_gradient(u, q));
                        let gd = norm([ga[0] - gb[0], ga[1] - gb[1]]);
                        grad.push((d, len, gd / len.powf(alpha_prime)));
                    }
                }
            }
            m *= 2;
        }
    }
    if inc.is_empty() {
        return Err(Error::usage("no valid (x, h) pairs for the boundary profile"));
    }
    let increments = fit_profile(&inc, beta, beta, 4.0 * g.h, s_grid).expect("pairs exist");
    let gradients = fit_profile(&grad, alpha_prime, alpha_prime + 1.0, 4.0 * g.h, s_grid);
    Ok(BoundaryProfile { increments, gradients })
}

/// The default exponent grid `{0.05, 0.10, …, 0.95}`.
pub fn default_s_grid() -> Vec<f64> {
    (1..=19).map(|i| 0.05 * i as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SandwichReport {
    pub pass: bool,
    /// `min_x [(I(u+v) - I(u)) - M⁻v]`.
    pub lower_margin: f64,
    /// `min_x [M⁺v - (I(u+v) - I(u))]`.
    pub upper_margin: f64,
    pub tolerance: f64,
}

/// Checks `M⁻v ≤ I(u+v) - I(u) ≤ M⁺v` at every interior node.
pub fn sandwich_check(spec: &OperatorSpec, u: &Field, v: &Field, tol: f64) -> Result<SandwichReport> {
    let c = spec.constants();
    let g = u.grid;
    let op = Operator::new(spec, g)?;
    let plus = Operator::new(&OperatorSpec::extremal(Sign::Plus, c)?, g)?;
    let minus = Operator::new(&OperatorSpec::extremal(Sign::Minus, c)?, g)?;
    let w = u.combine(1.0, v, 1.0)?;
    let nodes = g.interior_nodes();
    let iu = op.eval_nodes(u, &nodes)?;
    let iw = op.eval_nodes(&w, &nodes)?;
    let mp = plus.eval_nodes(v, &nodes)?;
    let mm = minus.eval_nodes(v, &nodes)?;
    let mut lower = f64::INFINITY;
    let mut upper = f64::INFINITY;
    for n in 0..nodes.len() {
        let d = iw[n] - iu[n];
        lower = lower.min(d - mm[n]);
        upper = upper.min(mp[n] - d);
    }
    Ok(SandwichReport {
        pass: lower >= -tol && upper >= -tol,
        lower_margin: lower,
        upper_margin: upper,
        tolerance: tol,
    })
}

/// `max |f(x+h) - f(x)| / |h|^β` over interior pairs with axis steps `|h| ≤ 1/4`.
pub fn holder_seminorm(f: &Field, beta: f64) -> f64 {
    let g = f.grid;
    let nodes = g.interior_nodes();
    let max_m = (0.25 / g.h).floor() as i64;
    nodes
        .par_iter()
        .map(|&i| {
            let k = g.lattice(i);
            let mut best: f64 = 0.0;
            for e in axes(g.dim) {
                for m in 1..=max_m {
                    let q = [k[0] + m * e[0], k[1] + m * e[1]];
                    if !is_interior(g.point(q)) {
                        break;
                    }
                    let v = (f.lattice_value(q) - f.values[i]).abs() / (m as f64 * g.h).powf(beta);
                    best = best.max(v);
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuotientCheck {
    pub pass: bool,
    /// `min_x M⁺w_h(x) + [f]_β`; must be `≥ -tol`.
    pub plus_margin: f64,
    /// `[f]_β - max_x M⁻w_h(x)`; must be `≥ -tol`.
    pub minus_margin: f64,
    pub f_seminorm: f64,
    pub tolerance: f64,
}

/// For a translation-invariant `I` with `I(u) = f`: `M⁺w_h ≥ -[f]_β` and
/// `M⁻w_h ≤ [f]_β` on `B_{3/4}`, with `w_h` the difference quotient.
pub fn quotient_equation_check(spec: &OperatorSpec, u: &Field, f: &Field, h: Lattice, beta: f64, tol: f64) -> Result<QuotientCheck> {
    if !spec.is_translation_invariant() {
        return Err(Error::usage("the quotient check needs a translation-invariant operator"));
    }
    let c = spec.constants();
    let g = u.grid;
    let w = difference_quotient(u, h, beta)?;
    let fs = holder_seminorm(f, beta);
    let nodes = region_nodes(&g, &Ball::new([0.0, 0.0], 0.75));
    let plus = Operator::new(&OperatorSpec::extremal(Sign::Plus, c)?, g)?.eval_nodes(&w, &nodes)?;
    let minus = Operator::new(&OperatorSpec::extremal(Sign::Minus, c)?, g)?.eval_nodes(&w, &nodes)?;
    let pm = plus.iter().cloned().fold(f64::INFINITY, f64::min) + fs;
    let mm = fs - minus.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(QuotientCheck {
        pass: pm >= -tol && mm >= -tol,
        plus_margin: pm,
        minus_margin: mm,
        f_seminorm: fs,
        tolerance: tol,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    /// Radius of the interior fit region `B_r`.
    pub interior_radius: f64,
    /// Number of dyadic scales.
    pub scales: usize,
    /// Exponent `β` of the exterior seminorm and the boundary profile.
    pub beta: f64,
    /// Exponent of the gradient profile.
    pub alpha_prime: f64,
    pub s_grid: Vec<f64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            interior_radius: 0.5,
            scales: 4,
            beta: 1.0,
            alpha_prime: 1.0,
            s_grid: default_s_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub lattice_floor: f64,
    /// First increments on the interior region.
    pub interior: HolderFit,
    /// Second increments on the interior region.
    pub second: HolderFit,
    pub alpha0: f64,
    pub alpha0_interval: (f64, f64),
    /// Second-increment slope minus one.
    pub alpha1: f64,
    pub alpha1_interval: (f64, f64),
    pub boundary: Option<BoundaryProfile>,
    pub a_beta: f64,
    pub weighted_l1: f64,
    pub weighted_l1_tail_bound: f64,
    pub oscillation: f64,
}

/// Hölder fits, boundary profile and seminorms of a solution field.
pub fn regularity_report(u: &Field, sigma0: f64, config: &DiagnosticsConfig) -> Result<RegularityReport> {
    let g = u.grid;
    let region = Ball::new([0.0, 0.0], config.interior_radius);
    let max_scale = 0.5 * (1.0 - config.interior_radius);
    let scales = dyadic_scales(&g, max_scale, config.scales);
    let interior = holder_fit(u, &region, 0, &scales)?;
    let second = holder_fit(u, &region, 1, &scales)?;
    let boundary = match weighted_boundary_profile(u, config.beta, config.alpha_prime, &config.s_grid) {
        Ok(b) => Some(b),
        Err(Error::Usage(_)) => None,
        Err(e) => return Err(e),
    };
    let w = WeightSpec::new(g.dim, sigma0)?;
    let l1 = u.weighted_l1_norm(&w)?;
    let (alpha1, alpha1_interval) = if second.degenerate {
        (0.0, (0.0, 0.0))
    } else {
        let (a, b) = second.interval();
        (second.exponent - 1.0, (a - 1.0, b - 1.0))
    };
    Ok(RegularityReport {
        lattice_floor: scales[0],
        alpha0: interior.exponent,
        alpha0_interval: if interior.degenerate { (0.0, 0.0) } else { interior.interval() },
        alpha1,
        alpha1_interval,
        interior,
        second,
        boundary,
        a_beta: a_beta_seminorm(u, config.beta, sigma0)?,
        weighted_l1: l1.value,
        weighted_l1_tail_bound: l1.tail_bound,
        oscillation: u.oscillation(&Ball::unit())?,
    })
}

impl RegularityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-scale table of the interior fits: `(order, scale, max_increment, fit_residual)`.
    pub fn write_scales_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "order,scale,max_increment,fit_residual")?;
        for (order, fit) in [(0, &self.interior), (1, &self.second)] {
            for r in &fit.table {
                writeln!(out, "{order},{:e},{:e},{:e}", r.scale, r.max_increment, r.fit_residual)?;
            }
        }
        Ok(())
    }
}
