//! Uniform lattices over `[-R_out, R_out]^n`, closed-form function registry,
//! exterior data and sampled fields.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::WeightSpec;
use crate::numerics::{cell_mass_1d, cell_mass_2d};
use crate::{norm, Point};

/// Lattice multi-index relative to the origin; the second entry is 0 in 1D.
pub type Lattice = [i64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub h: f64,
    pub r_out: f64,
    half: i64,
}

impl Grid {
    pub fn new(dim: usize, h: f64, r_out: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::usage(format!("dimension must be 1 or 2 (got {dim})")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::usage(format!("grid spacing must be positive (got {h})")));
        }
        if r_out < 2.0 {
            return Err(Error::usage(format!("computational radius must be >= 2 (got {r_out})")));
        }
        let half = (r_out / h).round();
        if (half * h - r_out).abs() > 1e-9 * r_out {
            return Err(Error::usage(format!("spacing {h} does not divide R_out = {r_out}")));
        }
        let grid = Self {
            dim,
            h,
            r_out,
            half: half as i64,
        };
        let per_axis = (1..).take_while(|k| (*k as f64) * h < 1.0 - 1e-12).count() * 2 + 1;
        if per_axis < 3 {
            return Err(Error::usage("grid needs at least 3 interior nodes per axis"));
        }
        Ok(grid)
    }

    /// Number of nodes along one axis.
    pub fn per_axis(&self) -> usize {
        (2 * self.half + 1) as usize
    }

    pub fn half_width(&self) -> i64 {
        self.half
    }

    pub fn len(&self) -> usize {
        self.per_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, k: Lattice) -> Option<usize> {
        let m = self.half;
        if k[0].abs() > m || k[1].abs() > m || (self.dim == 1 && k[1] != 0) {
            return None;
        }
        let n = self.per_axis() as i64;
        Some(((k[1] + m) * n * (self.dim as i64 - 1) + k[0] + m) as usize)
    }

    pub fn lattice(&self, idx: usize) -> Lattice {
        let n = self.per_axis();
        let m = self.half;
        if self.dim == 1 {
            [idx as i64 - m, 0]
        } else {
            [(idx % n) as i64 - m, (idx / n) as i64 - m]
        }
    }

    pub fn point(&self, k: Lattice) -> Point {
        [k[0] as f64 * self.h, k[1] as f64 * self.h]
    }

    pub fn node_point(&self, idx: usize) -> Point {
        self.point(self.lattice(idx))
    }

    pub fn in_box(&self, p: Point) -> bool {
        let tol = 1e-12 * self.r_out;
        p[0].abs() <= self.r_out + tol && (self.dim == 1 || p[1].abs() <= self.r_out + tol)
    }

    /// Nodes strictly inside the unit ball, in lattice order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| is_interior(self.node_point(i)))
            .collect()
    }

    /// Interpolation stencil for an in-box point: piecewise quadratic per axis
    /// (biquadratic in 2D). Exact lattice points return a single unit weight.
    pub fn interp_stencil(&self, p: Point) -> Vec<(usize, f64)> {
        let axis = |x: f64| -> [(i64, f64); 3] {
            let t = x / self.h;
            let k0 = t.round().clamp((-self.half + 1) as f64, (self.half - 1) as f64) as i64;
            let s = t - k0 as f64;
            [
                (k0 - 1, 0.5 * s * (s - 1.0)),
                (k0, 1.0 - s * s),
                (k0 + 1, 0.5 * s * (s + 1.0)),
            ]
        };
        let ax = axis(p[0]);
        let mut out = Vec::with_capacity(9);
        if self.dim == 1 {
            for (k, w) in ax {
                if w != 0.0 {
                    out.push((self.index([k, 0]).unwrap(), w));
                }
            }
        } else {
            let ay = axis(p[1]);
            for (ky, wy) in ay {
                for (kx, wx) in ax {
                    let w = wx * wy;
                    if w != 0.0 {
                        out.push((self.index([kx, ky]).unwrap(), w));
                    }
                }
            }
        }
        out
    }
}

/// `|x| < 1`, with a small guard so nodes on the unit sphere count as exterior.
pub fn is_interior(x: Point) -> bool {
    norm(x) < 1.0 - 1e-12
}

/// Closed ball used as a region selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn unit() -> Self {
        Self::new([0.0, 0.0], 1.0)
    }

    pub fn contains(&self, x: Point) -> bool {
        norm([x[0] - self.center[0], x[1] - self.center[1]]) < self.radius
    }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn bump_profile(s2: f64) -> f64 {
    if s2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s2)).exp()
    }
}

/// Registry of closed-form functions on `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClosedForm {
    Zero,
    Constant {
        value: f64,
    },
    /// `value + slope · x`
    Affine {
        value: f64,
        slope: Point,
    },
    /// `value + slope · x + ½ xᵀ H x`
    Quadratic {
        value: f64,
        slope: Point,
        hessian: [[f64; 2]; 2],
    },
    /// `amplitude (1 - |x|²)₊^exponent`
    BallProfile {
        exponent: f64,
        amplitude: f64,
    },
    /// `value` on the open ball of the given radius, 0 elsewhere.
    BallIndicator {
        radius: f64,
        value: f64,
    },
    /// `amplitude · exp(1 - 1/(1 - |x-c|²/r²))`, peak `amplitude`.
    Bump {
        center: Point,
        radius: f64,
        amplitude: f64,
    },
    /// `slope · min(|x - c|, cap)`
    Cone {
        center: Point,
        slope: f64,
        #[serde(default)]
        cap: Option<f64>,
    },
    /// `amplitude |x - c|^exponent`
    Power {
        center: Point,
        exponent: f64,
        amplitude: f64,
    },
    /// `amplitude |x - c|^exponent · bump(x; c, r)`
    HolderBump {
        center: Point,
        exponent: f64,
        radius: f64,
        amplitude: f64,
    },
    /// `amplitude (r² - |x-c|²)₊`
    TruncatedQuadratic {
        center: Point,
        radius: f64,
        amplitude: f64,
    },
    Sum {
        terms: Vec<ClosedForm>,
    },
    /// `amplitude · inner((x - shift) / dilation)`
    Transformed {
        inner: Box<ClosedForm>,
        shift: Point,
        dilation: f64,
        amplitude: f64,
    },
    /// `(inner(x + step) - inner(x)) / |step|^beta`
    Increment {
        inner: Box<ClosedForm>,
        step: Point,
        beta: f64,
    },
}

impl ClosedForm {
    pub fn eval(&self, x: Point) -> f64 {
        match self {
            ClosedForm::Zero => 0.0,
            ClosedForm::Constant { value } => *value,
            ClosedForm::Affine { value, slope } => value + slope[0] * x[0] + slope[1] * x[1],
            ClosedForm::Quadratic { value, slope, hessian } => {
                let q = hessian[0][0] * x[0] * x[0]
                    + (hessian[0][1] + hessian[1][0]) * x[0] * x[1]
                    + hessian[1][1] * x[1] * x[1];
                value + slope[0] * x[0] + slope[1] * x[1] + 0.5 * q
            }
            ClosedForm::BallProfile { exponent, amplitude } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                if r2 >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - r2).powf(*exponent)
                }
            }
            ClosedForm::BallIndicator { radius, value } => {
                if norm(x) < *radius {
                    *value
                } else {
                    0.0
                }
            }
            ClosedForm::Bump { center, radius, amplitude } => {
                let d = sub(x, *center);
                amplitude * bump_profile((d[0] * d[0] + d[1] * d[1]) / (radius * radius))
            }
            ClosedForm::Cone { center, slope, cap } => {
                let r = norm(sub(x, *center));
                slope * cap.map_or(r, |c| r.min(c))
            }
            ClosedForm::Power {
                center,
                exponent,
                amplitude,
            } => amplitude * norm(sub(x, *center)).powf(*exponent),
            ClosedForm::HolderBump {
                center,
                exponent,
                radius,
                amplitude,
            } => {
                let d = sub(x, *center);
                let r2 = d[0] * d[0] + d[1] * d[1];
                amplitude * r2.sqrt().powf(*exponent) * bump_profile(r2 / (radius * radius))
            }
            ClosedForm::TruncatedQuadratic {
                center,
                radius,
                amplitude,
            } => {
                let d = sub(x, *center);
                amplitude * (radius * radius - d[0] * d[0] - d[1] * d[1]).max(0.0)
            }
            ClosedForm::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
            ClosedForm::Transformed {
                inner,
                shift,
                dilation,
                amplitude,
            } => amplitude * inner.eval([(x[0] - shift[0]) / dilation, (x[1] - shift[1]) / dilation]),
            ClosedForm::Increment { inner, step, beta } => {
                (inner.eval([x[0] + step[0], x[1] + step[1]]) - inner.eval(x)) / norm(*step).powf(*beta)
            }
        }
    }

    /// Radius beyond which the function vanishes identically, if any.
    pub fn support_radius(&self) -> Option<f64> {
        match self {
            ClosedForm::Zero => Some(0.0),
            ClosedForm::Constant { value } if *value == 0.0 => Some(0.0),
            ClosedForm::BallProfile { .. } => Some(1.0),
            ClosedForm::BallIndicator { radius, .. } => Some(*radius),
            ClosedForm::Bump { center, radius, .. }
            | ClosedForm::HolderBump { center, radius, .. }
            | ClosedForm::TruncatedQuadratic { center, radius, .. } => Some(norm(*center) + radius),
            ClosedForm::Sum { terms } => terms
                .iter()
                .map(|t| t.support_radius())
                .try_fold(0.0f64, |acc, r| r.map(|r| acc.max(r))),
            ClosedForm::Transformed {
                inner, shift, dilation, ..
            } => inner.support_radius().map(|r| norm(*shift) + dilation * r),
            ClosedForm::Increment { inner, step, .. } => inner.support_radius().map(|r| r + norm(*step)),
            _ => None,
        }
    }

    /// Constants `(A, B)` with `|f(x)| <= A + B |x|`, if the function grows at most linearly.
    pub fn growth_bound(&self) -> Option<(f64, f64)> {
        match self {
            ClosedForm::Zero => Some((0.0, 0.0)),
            ClosedForm::Constant { value } => Some((value.abs(), 0.0)),
            ClosedForm::Affine { value, slope } => Some((value.abs(), norm(*slope))),
            ClosedForm::Quadratic { value, slope, hessian } => {
                if hessian.iter().flatten().all(|v| *v == 0.0) {
                    Some((value.abs(), norm(*slope)))
                } else {
                    None
                }
            }
            ClosedForm::BallProfile { amplitude, .. } => Some((amplitude.abs(), 0.0)),
            ClosedForm::BallIndicator { value, .. } => Some((value.abs(), 0.0)),
            ClosedForm::Bump { amplitude, .. } => Some((amplitude.abs(), 0.0)),
            ClosedForm::Cone { center, slope, cap } => match cap {
                Some(c) => Some((slope.abs() * c, 0.0)),
                None => Some((slope.abs() * norm(*center), slope.abs())),
            },
            ClosedForm::Power {
                exponent, amplitude, center,
            } => {
                if *exponent <= 1.0 {
                    // |x-c|^γ <= 1 + |x| + |c|
                    Some((amplitude.abs() * (1.0 + norm(*center)), amplitude.abs()))
                } else {
                    None
                }
            }
            ClosedForm::HolderBump {
                exponent,
                radius,
                amplitude,
                ..
            } => Some((amplitude.abs() * radius.powf(*exponent), 0.0)),
            ClosedForm::TruncatedQuadratic { radius, amplitude, .. } => Some((amplitude.abs() * radius * radius, 0.0)),
            ClosedForm::Sum { terms } => terms.iter().try_fold((0.0, 0.0), |(a, b), t| {
                t.growth_bound().map(|(ta, tb)| (a + ta, b + tb))
            }),
            ClosedForm::Transformed {
                inner,
                shift,
                dilation,
                amplitude,
            } => inner.growth_bound().map(|(a, b)| {
                let m = amplitude.abs();
                (m * (a + b * norm(*shift) / dilation), m * b / dilation)
            }),
            ClosedForm::Increment { inner, step, beta } => inner.growth_bound().map(|(a, b)| {
                let s = norm(*step).powf(-beta);
                (s * (2.0 * a + b * norm(*step)), 2.0 * s * b)
            }),
        }
    }
}

/// How the exterior data behaves at infinity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "kebab-case")]
pub enum Decay {
    /// `g ≡ 0` for `|x| >= radius`.
    CompactSupport { radius: f64 },
    /// `|g| <= bound`.
    Bounded { bound: f64 },
    /// `|g(x)| <= constant + slope |x|`.
    LinearGrowth { constant: f64, slope: f64 },
}

/// Closed-form data on the complement of the lattice box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExteriorData {
    pub form: ClosedForm,
    pub decay: Decay,
}

impl ExteriorData {
    pub fn new(form: ClosedForm) -> Result<Self> {
        let decay = if let Some(radius) = form.support_radius() {
            Decay::CompactSupport { radius }
        } else {
            match form.growth_bound() {
                Some((a, 0.0)) => Decay::Bounded { bound: a },
                Some((a, b)) => Decay::LinearGrowth { constant: a, slope: b },
                None => {
                    return Err(Error::usage(
                        "exterior data must grow at most linearly to be integrable against the kernel",
                    ))
                }
            }
        };
        Ok(Self { form, decay })
    }

    pub fn zero() -> Self {
        Self {
            form: ClosedForm::Zero,
            decay: Decay::CompactSupport { radius: 0.0 },
        }
    }

    pub fn eval(&self, x: Point) -> f64 {
        self.form.eval(x)
    }
}

/// A function sampled at every lattice node, plus exterior data for points
/// outside the lattice box.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub exterior: ExteriorData,
}

impl Field {
    pub fn from_parts(grid: Grid, values: Vec<f64>, exterior: ExteriorData) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::usage(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!("non-finite field value at node {i}")));
        }
        if let Decay::CompactSupport { radius } = exterior.decay {
            if radius > grid.r_out * (1.0 + 1e-12) && grid.dim == 1 {
                return Err(Error::usage("compactly supported exterior must vanish beyond R_out"));
            }
        }
        Ok(Self { grid, values, exterior })
    }

    /// Pointwise sampling of `f` on every node.
    pub fn sample(grid: Grid, f: &ClosedForm, exterior: ExteriorData) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f.eval(grid.node_point(i))).collect();
        Self::from_parts(grid, values, exterior)
    }

    /// Samples the exterior data itself everywhere.
    pub fn from_exterior(grid: Grid, exterior: ExteriorData) -> Result<Self> {
        let form = exterior.form.clone();
        Self::sample(grid, &form, exterior)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            grid: self.grid,
            values: vec![0.0; self.values.len()],
            exterior: ExteriorData::zero(),
        }
    }

    pub fn lattice_value(&self, k: Lattice) -> f64 {
        match self.grid.index(k) {
            Some(i) => self.values[i],
            None => self.exterior.eval(self.grid.point(k)),
        }
    }

    /// Total lookup: lattice value, interpolated value inside the box, or
    /// the exterior closed form outside it.
    pub fn value_at(&self, p: Point) -> f64 {
        if self.grid.in_box(p) {
            self.grid
                .interp_stencil(p)
                .into_iter()
                .map(|(i, w)| w * self.values[i])
                .sum()
        } else {
            self.exterior.eval(p)
        }
    }

    /// `u(x+y) - 2u(x) + u(x-y)` for a lattice node and lattice offset.
    pub fn delta2(&self, x: Lattice, y: Lattice) -> f64 {
        let plus = self.lattice_value([x[0] + y[0], x[1] + y[1]]);
        let minus = self.lattice_value([x[0] - y[0], x[1] - y[1]]);
        (plus + minus) - 2.0 * self.lattice_value(x)
    }

    pub fn sup_norm_on(&self, nodes: &[usize]) -> f64 {
        nodes.iter().map(|&i| self.values[i].abs()).fold(0.0, f64::max)
    }

    /// Pointwise linear combination `a·self + b·other`; exteriors combine symbolically.
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        if self.grid != other.grid {
            return Err(Error::usage("fields live on different grids"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(u, v)| a * u + b * v)
            .collect();
        let scaled = |f: &ClosedForm, c: f64| ClosedForm::Transformed {
            inner: Box::new(f.clone()),
            shift: [0.0, 0.0],
            dilation: 1.0,
            amplitude: c,
        };
        let form = ClosedForm::Sum {
            terms: vec![scaled(&self.exterior.form, a), scaled(&other.exterior.form, b)],
        };
        Field::from_parts(self.grid, values, ExteriorData::new(form)?)
    }

    pub fn scale(&self, a: f64) -> Result<Field> {
        let values = self.values.iter().map(|v| a * v).collect();
        let form = ClosedForm::Transformed {
            inner: Box::new(self.exterior.form.clone()),
            shift: [0.0, 0.0],
            dilation: 1.0,
            amplitude: a,
        };
        Field::from_parts(self.grid, values, ExteriorData::new(form)?)
    }

    /// `∫ |u| ω` by exact-weight cell quadrature. Cells cut by the unit sphere
    /// are split: each side is valued by the nearest node on that side.
    pub fn weighted_l1_norm(&self, w: &WeightSpec) -> Result<WeightedL1> {
        if w.dim != self.grid.dim {
            return Err(Error::usage("weight and field dimensions differ"));
        }
        let phi = w.radial_antiderivative();
        let h = self.grid.h;
        let mass = |x: Point, lo: f64, hi: f64| {
            if self.grid.dim == 1 {
                cell_mass_1d(x[0], h, lo, hi, &phi)
            } else {
                cell_mass_2d(x, h, lo, hi, &phi)
            }
        };
        let mut value = 0.0;
        for (i, u) in self.values.iter().enumerate() {
            let x = self.grid.node_point(i);
            let inside = is_interior(x);
            let r = norm(x);
            let straddles = (r - 1.0).abs() < h * std::f64::consts::SQRT_2;
            if !straddles {
                if *u != 0.0 {
                    value += u.abs() * mass(x, 0.0, f64::INFINITY);
                }
                continue;
            }
            // the part of the cell on the other side of the sphere takes the
            // value of the nearest node on that side
            let other = self.nearest_across(i, !inside).unwrap_or(*u);
            let (u_in, u_out) = if inside { (*u, other) } else { (other, *u) };
            value += u_in.abs() * mass(x, 0.0, 1.0) + u_out.abs() * mass(x, 1.0, f64::INFINITY);
        }
        let edge = self.grid.r_out + 0.5 * h;
        let tail_bound = match self.exterior.decay {
            Decay::CompactSupport { radius } if radius <= edge => 0.0,
            _ => {
                let (a, b) = self
                    .exterior
                    .form
                    .growth_bound()
                    .unwrap_or((f64::INFINITY, f64::INFINITY));
                let mut t = a * w.tail_mass(edge);
                if b > 0.0 {
                    t += b * w.first_moment_tail(edge);
                }
                t
            }
        };
        Ok(WeightedL1 { value, tail_bound })
    }

    fn nearest_across(&self, i: usize, want_interior: bool) -> Option<f64> {
        let k = self.grid.lattice(i);
        let x = self.grid.point(k);
        let span = if self.grid.dim == 1 { 0 } else { 1 };
        let mut best: Option<(f64, f64)> = None;
        for dy in -span..=span {
            for dx in -1..=1i64 {
                let n = [k[0] + dx, k[1] + dy];
                let p = self.grid.point(n);
                if is_interior(p) != want_interior {
                    continue;
                }
                let d = norm(sub(p, x));
                if d > 0.0 && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, self.lattice_value(n)));
                }
            }
        }
        best.map(|(_, v)| v)
    }

    /// `max - min` over lattice nodes inside `region`.
    pub fn oscillation(&self, region: &Ball) -> Result<f64> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, v) in self.values.iter().enumerate() {
            if region.contains(self.grid.node_point(i)) {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if lo > hi {
            return Err(Error::usage("oscillation region contains no lattice node"));
        }
        Ok(hi - lo)
    }

    /// `μ · u((x - shift)/γ)` sampled on this field's grid.
    pub fn restrict_translate_scale(&self, shift: Point, dilation: f64, amplitude: f64) -> Result<Field> {
        self.transform_onto(self.grid, shift, dilation, amplitude)
    }

    /// `μ · u((x - shift)/γ)` sampled on an arbitrary target grid.
    pub fn transform_onto(&self, target: Grid, shift: Point, dilation: f64, amplitude: f64) -> Result<Field> {
        if !(dilation > 0.0) {
            return Err(Error::usage("dilation must be positive"));
        }
        if amplitude == 0.0 {
            return Err(Error::usage("amplitude must be nonzero"));
        }
        if target.dim != self.grid.dim {
            return Err(Error::usage("target grid dimension differs"));
        }
        let values = (0..target.len())
            .map(|i| {
                let x = target.node_point(i);
                let p = [(x[0] - shift[0]) / dilation, (x[1] - shift[1]) / dilation];
                amplitude * self.value_at(snap(&self.grid, p))
            })
            .collect();
        let form = ClosedForm::Transformed {
            inner: Box::new(self.exterior.form.clone()),
            shift,
            dilation,
            amplitude,
        };
        Field::from_parts(target, values, ExteriorData::new(form)?)
    }

    pub fn header(&self) -> FieldHeader {
        FieldHeader {
            n: self.grid.dim,
            h: self.grid.h,
            r_out: self.grid.r_out,
            exterior: self.exterior.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = FieldDocument {
            header: self.header(),
            values: self.values.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: FieldDocument = serde_json::from_str(s)?;
        let grid = Grid::new(doc.header.n, doc.header.h, doc.header.r_out)?;
        Field::from_parts(grid, doc.values, doc.header.exterior)
    }

    /// Binary layout: magic `SGLF`, u32 version, u64 header length, header
    /// JSON, u64 value count, little-endian f64 values in lattice order.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.header())?;
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Serialization("not a field file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::Serialization("unsupported field file version".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut header)?;
        let header: FieldHeader = serde_json::from_slice(&header)?;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        let grid = Grid::new(header.n, header.h, header.r_out)?;
        Field::from_parts(grid, values, header.exterior)
    }
}

const FIELD_MAGIC: &[u8; 4] = b"SGLF";

/// Rounds points that are within floating-point noise of a lattice node onto it.
fn snap(grid: &Grid, p: Point) -> Point {
    let s = |x: f64| {
        let k = (x / grid.h).round();
        if (x / grid.h - k).abs() < 1e-9 {
            k * grid.h
        } else {
            x
        }
    };
    [s(p[0]), s(p[1])]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub n: usize,
    pub h: f64,
    pub r_out: f64,
    pub exterior: ExteriorData,
}

#[derive(Serialize, Deserialize)]
struct FieldDocument {
    header: FieldHeader,
    values: Vec<f64>,
}

/// Weighted `L¹` norm split into the lattice quadrature and an analytic
/// upper bound for the part beyond the lattice box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedL1 {
    pub value: f64,
    pub tail_bound: f64,
}

impl WeightedL1 {
    pub fn upper(&self) -> f64 {
        self.value + self.tail_bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1() -> Grid {
        Grid::new(1, 1.0 / 16.0, 2.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(1, 0.3, 2.0).is_err());
        assert!(Grid::new(1, 0.25, 1.0).is_err());
        assert!(Grid::new(3, 0.25, 2.0).is_err());
        assert!(Grid::new(1, 1.0, 2.0).is_err());
        let g = Grid::new(2, 0.25, 2.0).unwrap();
        assert_eq!(g.len(), 17 * 17);
        for i in [0, 5, 100, 288] {
            assert_eq!(g.index(g.lattice(i)), Some(i));
        }
    }

    #[test]
    fn sample_zero_and_affine() {
        let g = grid1();
        let z = Field::sample(g, &ClosedForm::Zero, ExteriorData::zero()).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
        let aff = ClosedForm::Affine {
            value: 3.0,
            slope: [2.0, 0.0],
        };
        let u = Field::sample(g, &aff, ExteriorData::new(aff.clone()).unwrap()).unwrap();
        for (i, v) in u.values.iter().enumerate() {
            assert_eq!(*v, 3.0 + 2.0 * g.node_point(i)[0]);
        }
    }

    #[test]
    fn ball_profile_support() {
        let g = grid1();
        let f = ClosedForm::BallProfile {
            exponent: 0.75,
            amplitude: 1.0,
        };
        let u = Field::sample(g, &f, ExteriorData::zero()).unwrap();
        for (i, v) in u.values.iter().enumerate() {
            assert!(*v >= 0.0);
            if norm(g.node_point(i)) >= 1.0 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn delta2_of_square_is_exact() {
        let g = grid1();
        let f = ClosedForm::Quadratic {
            value: 0.0,
            slope: [0.0, 0.0],
            hessian: [[2.0, 0.0], [0.0, 0.0]],
        };
        let u = Field::sample(g, &f, ExteriorData::zero()).unwrap();
        for k in -8..=8 {
            for y in 1..=8 {
                let yv = y as f64 * g.h;
                assert!((u.delta2([k, 0], [y, 0]) - 2.0 * yv * yv).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn weighted_norm_of_indicator() {
        let g = Grid::new(1, 1.0 / 64.0, 4.0).unwrap();
        let w = WeightSpec::new(1, 0.5).unwrap();
        let f = ClosedForm::BallIndicator { radius: 1.0, value: 1.0 };
        let u = Field::sample(g, &f, ExteriorData::zero()).unwrap();
        let n = u.weighted_l1_norm(&w).unwrap();
        let exact = 4.0 * (1.0 - 2f64.powf(-0.5));
        assert!((n.value - exact).abs() < 1e-12, "{} vs {exact}", n.value);
        assert_eq!(n.tail_bound, 0.0);
        let z = u.zeros_like();
        assert_eq!(z.weighted_l1_norm(&w).unwrap().value, 0.0);
    }

    #[test]
    fn bounded_exterior_gets_tail_correction() {
        let g = grid1();
        let w = WeightSpec::new(1, 0.5).unwrap();
        let ext = ExteriorData::new(ClosedForm::Constant { value: 2.0 }).unwrap();
        let u = Field::from_exterior(g, ext).unwrap();
        let n = u.weighted_l1_norm(&w).unwrap();
        assert!((n.tail_bound - 2.0 * w.tail_mass(2.0 + g.h / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn oscillation_examples() {
        let g = grid1();
        let c = Field::sample(g, &ClosedForm::Constant { value: 4.0 }, ExteriorData::zero()).unwrap();
        assert_eq!(c.oscillation(&Ball::unit()).unwrap(), 0.0);
        let x = ClosedForm::Affine {
            value: 0.0,
            slope: [1.0, 0.0],
        };
        let u = Field::sample(g, &x, ExteriorData::zero()).unwrap();
        assert!((u.oscillation(&Ball::unit()).unwrap() - (2.0 - 2.0 * g.h)).abs() < 1e-14);
        let small = u.oscillation(&Ball::new([0.0, 0.0], 0.5)).unwrap();
        assert!(small <= u.oscillation(&Ball::unit()).unwrap());
        assert!(u.oscillation(&Ball::new([0.01, 0.0], 0.001)).is_err());
    }

    #[test]
    fn transforms() {
        let g = grid1();
        let f = ClosedForm::Bump {
            center: [0.1, 0.0],
            radius: 0.7,
            amplitude: 1.0,
        };
        let u = Field::sample(g, &f, ExteriorData::zero()).unwrap();
        assert_eq!(u.restrict_translate_scale([0.0, 0.0], 1.0, 1.0).unwrap().values, u.values);
        let shifted = u.restrict_translate_scale([g.h, 0.0], 1.0, 1.0).unwrap();
        for k in -20..20 {
            assert_eq!(shifted.lattice_value([k + 1, 0]), u.lattice_value([k, 0]));
        }
        let doubled = u.restrict_translate_scale([0.0, 0.0], 1.0, 2.0).unwrap();
        for (a, b) in doubled.values.iter().zip(&u.values) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn quadratic_interpolation_is_exact_for_quadratics() {
        let g = Grid::new(2, 0.25, 2.0).unwrap();
        let f = ClosedForm::Quadratic {
            value: 1.0,
            slope: [0.5, -1.0],
            hessian: [[1.0, 0.3], [0.3, -2.0]],
        };
        let u = Field::sample(g, &f, ExteriorData::zero()).unwrap();
        for p in [[0.13, -0.71], [1.99, 1.9], [-1.3, 0.05]] {
            assert!((u.value_at(p) - f.eval(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn serialization_round_trips_bitwise() {
        let g = Grid::new(2, 0.25, 2.0).unwrap();
        let f = ClosedForm::Bump {
            center: [0.1, -0.3],
            radius: 0.9,
            amplitude: std::f64::consts::PI,
        };
        let u = Field::sample(g, &f, ExteriorData::new(f.clone()).unwrap()).unwrap();
        let back = Field::from_json(&u.to_json().unwrap()).unwrap();
        assert_eq!(back, u);
        let mut buf = Vec::new();
        u.write_binary(&mut buf).unwrap();
        assert_eq!(Field::read_binary(buf.as_slice()).unwrap(), u);
    }
}
