//! Kernel families of order `σ`, the integrability weight and the
//! cutoff/mollifier pair used by the regularized operators.
//!
//! A kernel is always stored through its *profile* `a(x, y)`; the full density
//! is `(2 - σ) a(x, y) |y|^{-n-σ}`. Uniform ellipticity means
//! `λ <= a(x, y) <= Λ` everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::composite_gauss;
use crate::{norm, Point};

/// Ellipticity constants `0 < λ <= Λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipticity {
    pub lower: f64,
    pub upper: f64,
}

impl Ellipticity {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower <= upper && upper.is_finite()) {
            return Err(Error::usage(format!(
                "ellipticity constants must satisfy 0 < lambda <= Lambda (got {lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, a: f64) -> bool {
        a >= self.lower && a <= self.upper
    }
}

/// Angular/radial modulation `ψ(y) ∈ [-1, 1]` used by the ripple family.
/// Both variants are even in each coordinate of `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Modulation {
    Cosine { frequency: f64 },
    Checker { cell: f64 },
}

impl Modulation {
    pub fn eval(&self, y: Point) -> f64 {
        match *self {
            Modulation::Cosine { frequency } => (frequency * norm(y)).cos(),
            Modulation::Checker { cell } => {
                if checker_parity(y, cell) {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

fn checker_parity(y: Point, cell: f64) -> bool {
    let k = (y[0].abs() / cell).floor() as i64 + (y[1].abs() / cell).floor() as i64;
    k % 2 == 0
}

/// Registry of coefficient families `a(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    /// `a ≡ c`.
    Constant { c: f64 },
    /// Piecewise constant in `|y|`: `values[i]` on `[radii[i-1], radii[i])`,
    /// with `values.len() == radii.len() + 1`.
    RadialTable { radii: Vec<f64>, values: Vec<f64> },
    /// Alternating `low`/`high` on cells of side `cell` in `|y_1|, |y_2|`.
    Checkerboard { cell: f64, low: f64, high: f64 },
    /// `a = λ + (Λ-λ)(1 + η sin(k·x) ψ(y)) / 2`, Lipschitz in `x`.
    Ripple {
        wave: [f64; 2],
        amplitude: f64,
        modulation: Modulation,
    },
}

impl Profile {
    pub fn is_translation_invariant(&self) -> bool {
        match self {
            Profile::Ripple { wave, amplitude, .. } => *amplitude == 0.0 || (wave[0] == 0.0 && wave[1] == 0.0),
            _ => true,
        }
    }
}

/// A symmetric kernel of order `σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub dim: usize,
    pub sigma: f64,
    pub sigma0: f64,
    pub ellipticity: Ellipticity,
    pub profile: Profile,
}

/// Result of a sampled ellipticity check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub pass: bool,
    pub min_coefficient: f64,
    pub max_coefficient: f64,
    /// `min(min_a / λ, Λ / max_a)`; at least 1 exactly when the check passes.
    pub worst_ratio: f64,
}

impl KernelSpec {
    /// Builds a kernel and verifies `λ <= a <= Λ` on the standard sample set.
    pub fn new(dim: usize, sigma: f64, sigma0: f64, ellipticity: Ellipticity, profile: Profile) -> Result<Self> {
        let spec = Self::unchecked(dim, sigma, sigma0, ellipticity, profile)?;
        let report = spec.check_ellipticity_bounds(&standard_samples(dim))?;
        if !report.pass {
            let value = if report.min_coefficient < ellipticity.lower {
                report.min_coefficient
            } else {
                report.max_coefficient
            };
            return Err(Error::Ellipticity {
                value,
                lower: ellipticity.lower,
                upper: ellipticity.upper,
            });
        }
        Ok(spec)
    }

    /// Structural validation only; the profile may violate the ellipticity
    /// bounds. Used for negative controls.
    pub fn unchecked(dim: usize, sigma: f64, sigma0: f64, ellipticity: Ellipticity, profile: Profile) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::usage(format!("dimension must be 1 or 2 (got {dim})")));
        }
        if !(sigma0 > 0.0 && sigma0 < 2.0) {
            return Err(Error::usage(format!("sigma0 must lie in (0, 2) (got {sigma0})")));
        }
        if !(sigma > sigma0 && sigma < 2.0) {
            return Err(Error::usage(format!("sigma must lie in (sigma0, 2) (got {sigma})")));
        }
        Ellipticity::new(ellipticity.lower, ellipticity.upper)?;
        match &profile {
            Profile::RadialTable { radii, values } => {
                if values.len() != radii.len() + 1 {
                    return Err(Error::usage("radial table needs one more value than breakpoints"));
                }
                if radii.windows(2).any(|w| w[0] >= w[1]) || radii.iter().any(|r| *r <= 0.0) {
                    return Err(Error::usage("radial table breakpoints must be positive and increasing"));
                }
            }
            Profile::Checkerboard { cell, .. } | Profile::Ripple { modulation: Modulation::Checker { cell }, .. } => {
                if *cell <= 0.0 {
                    return Err(Error::usage("checkerboard cell size must be positive"));
                }
            }
            _ => {}
        }
        if let Profile::Ripple { amplitude, .. } = &profile {
            if !(0.0..=1.0).contains(amplitude) {
                return Err(Error::usage("ripple amplitude must lie in [0, 1]"));
            }
        }
        Ok(Self {
            dim,
            sigma,
            sigma0,
            ellipticity,
            profile,
        })
    }

    /// Convenience constructor for `a ≡ c`.
    pub fn constant(dim: usize, sigma: f64, sigma0: f64, ellipticity: Ellipticity, c: f64) -> Result<Self> {
        Self::new(dim, sigma, sigma0, ellipticity, Profile::Constant { c })
    }

    /// The profile value `a(x, y)`.
    pub fn coefficient(&self, x: Point, y: Point) -> f64 {
        let Ellipticity { lower, upper } = self.ellipticity;
        match &self.profile {
            Profile::Constant { c } => *c,
            Profile::RadialTable { radii, values } => {
                let r = norm(y);
                let i = radii.partition_point(|b| *b <= r);
                values[i]
            }
            Profile::Checkerboard { cell, low, high } => {
                if checker_parity(y, *cell) {
                    *high
                } else {
                    *low
                }
            }
            Profile::Ripple {
                wave,
                amplitude,
                modulation,
            } => {
                let phase = wave[0] * x[0] + wave[1] * x[1];
                lower + (upper - lower) * (1.0 + amplitude * phase.sin() * modulation.eval(y)) / 2.0
            }
        }
    }

    pub fn is_translation_invariant(&self) -> bool {
        self.profile.is_translation_invariant()
    }

    /// Full density `(2 - σ) a(x, y) |y|^{-n-σ}`.
    pub fn kernel_eval(&self, x: Point, y: Point) -> Result<f64> {
        let r = norm(y);
        if r == 0.0 {
            return Err(Error::Domain("kernel singularity at y = 0".into()));
        }
        let a = self.coefficient(x, y);
        if !self.ellipticity.contains(a) {
            return Err(Error::Ellipticity {
                value: a,
                lower: self.ellipticity.lower,
                upper: self.ellipticity.upper,
            });
        }
        Ok((2.0 - self.sigma) * a * r.powf(-(self.dim as f64) - self.sigma))
    }

    pub fn check_ellipticity_bounds(&self, samples: &[(Point, Point)]) -> Result<EllipticityReport> {
        if samples.is_empty() {
            return Err(Error::usage("ellipticity check needs at least one sample"));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (x, y) in samples {
            if norm(*y) == 0.0 {
                return Err(Error::usage("ellipticity samples must have y != 0"));
            }
            let a = self.coefficient(*x, *y);
            lo = lo.min(a);
            hi = hi.max(a);
        }
        let worst_ratio = (lo / self.ellipticity.lower).min(self.ellipticity.upper / hi);
        Ok(EllipticityReport {
            pass: lo >= self.ellipticity.lower && hi <= self.ellipticity.upper,
            min_coefficient: lo,
            max_coefficient: hi,
            worst_ratio,
        })
    }
}

/// Deterministic sample set covering `x ∈ [-1, 1]^n` and `|y|` from `1e-3` to `10`.
pub fn standard_samples(dim: usize) -> Vec<(Point, Point)> {
    let mut out = Vec::new();
    let xs: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
    let radii: Vec<f64> = (0..25).map(|i| 1e-3 * 10f64.powf(i as f64 / 6.0)).collect();
    let angles: Vec<f64> = if dim == 1 {
        vec![0.0, std::f64::consts::PI]
    } else {
        (0..12).map(|i| i as f64 * std::f64::consts::PI / 6.0 + 0.1).collect()
    };
    for &x0 in &xs {
        let x1s: &[f64] = if dim == 1 { &[0.0] } else { &xs };
        for &x1 in x1s {
            for &r in &radii {
                for &t in &angles {
                    let y = if dim == 1 { [r * t.cos(), 0.0] } else { [r * t.cos(), r * t.sin()] };
                    out.push(([x0, x1], y));
                }
            }
        }
    }
    out
}

/// The weight `ω_{σ0}(x) = (1 + |x|)^{-n-σ0}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub dim: usize,
    pub sigma0: f64,
}

impl WeightSpec {
    pub fn new(dim: usize, sigma0: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::usage("dimension must be 1 or 2"));
        }
        if !(sigma0 > 0.0 && sigma0 < 2.0) {
            return Err(Error::usage("sigma0 must lie in (0, 2)"));
        }
        Ok(Self { dim, sigma0 })
    }

    pub fn eval(&self, x: Point) -> f64 {
        (1.0 + norm(x)).powf(-(self.dim as f64) - self.sigma0)
    }

    /// Antiderivative in `r` of `ω(r) r^{n-1}` (polar measure, without the angular factor).
    pub fn radial_antiderivative(&self) -> impl Fn(f64) -> f64 {
        let (dim, s) = (self.dim, self.sigma0);
        move |r: f64| {
            if r.is_infinite() {
                return 0.0;
            }
            if dim == 1 {
                -(1.0 + r).powf(-s) / s
            } else {
                -(1.0 + r).powf(-s) / s + (1.0 + r).powf(-1.0 - s) / (1.0 + s)
            }
        }
    }

    fn angular_factor(&self) -> f64 {
        if self.dim == 1 {
            2.0
        } else {
            2.0 * std::f64::consts::PI
        }
    }

    /// `∫_{|x| > r} ω`.
    pub fn tail_mass(&self, r: f64) -> f64 {
        let phi = self.radial_antiderivative();
        self.angular_factor() * (phi(f64::INFINITY) - phi(r))
    }

    /// `∫_{|x| > r} |x| ω`, infinite unless `σ0 > 1`.
    pub fn first_moment_tail(&self, r: f64) -> f64 {
        let s = self.sigma0;
        if s <= 1.0 {
            return f64::INFINITY;
        }
        let v = if self.dim == 1 {
            (1.0 + r).powf(1.0 - s) / (s - 1.0) - (1.0 + r).powf(-s) / s
        } else {
            // ∫_r^∞ ρ² (1+ρ)^{-2-s} dρ
            let u = 1.0 + r;
            u.powf(1.0 - s) / (s - 1.0) - 2.0 * u.powf(-s) / s + u.powf(-1.0 - s) / (1.0 + s)
        };
        self.angular_factor() * v
    }
}

/// Smooth radial cutoff `φ_ε` (`≡ 1` on `B_{ε/2}`, supported in `B_ε`) and
/// standard mollifier `η_ε` (unit mass, supported in `B_ε`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffMollifierSpec {
    pub dim: usize,
    pub eps: f64,
    normalization: f64,
}

fn bump(t: f64) -> f64 {
    // exp(-1 / (1 - t^2)) on |t| < 1
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

fn smooth_step(t: f64) -> f64 {
    // C^∞ transition from 1 (t <= 0) to 0 (t >= 1)
    let f = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
    let a = f(1.0 - t);
    let b = f(t);
    a / (a + b)
}

impl CutoffMollifierSpec {
    pub fn new(dim: usize, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::usage(format!("cutoff radius must be positive (got {eps})")));
        }
        if dim != 1 && dim != 2 {
            return Err(Error::usage("dimension must be 1 or 2"));
        }
        // mass of exp(-1/(1-|x|^2)) over the unit ball
        let mass = if dim == 1 {
            2.0 * composite_gauss(0.0, 1.0, 64, 16, bump)
        } else {
            2.0 * std::f64::consts::PI * composite_gauss(0.0, 1.0, 64, 16, |r| r * bump(r))
        };
        Ok(Self {
            dim,
            eps,
            normalization: 1.0 / mass,
        })
    }

    pub fn cutoff(&self, y: Point) -> f64 {
        let t = norm(y) / self.eps;
        if t <= 0.5 {
            1.0
        } else if t >= 1.0 {
            0.0
        } else {
            smooth_step(2.0 * t - 1.0)
        }
    }

    pub fn mollifier(&self, x: Point) -> f64 {
        let t = norm(x) / self.eps;
        self.normalization * bump(t) / self.eps.powi(self.dim as i32)
    }

    /// Uniform quadrature grid over `B_ε` with `per_radius` steps per radius.
    /// Returns `(offset, η(offset) · cell volume)`; the raw weights sum to 1
    /// up to the quadrature error of the grid.
    pub fn mollifier_grid(&self, per_radius: usize) -> Vec<(Point, f64)> {
        let step = self.eps / per_radius as f64;
        let m = per_radius as i64;
        let vol = step.powi(self.dim as i32);
        let mut out = Vec::new();
        let range2 = if self.dim == 1 { 0..=0 } else { -m..=m };
        for j in range2 {
            for i in -m..=m {
                let p = [i as f64 * step, j as f64 * step];
                let w = self.mollifier(p) * vol;
                if w > 0.0 {
                    out.push((p, w));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ell() -> Ellipticity {
        Ellipticity::new(0.5, 2.0).unwrap()
    }

    #[test]
    fn constant_profile_density() {
        let k = KernelSpec::constant(1, 1.5, 0.5, ell(), 0.5).unwrap();
        let v = k.kernel_eval([0.3, 0.0], [2.0, 0.0]).unwrap();
        assert_eq!(v, (2.0 - 1.5) * 0.5 * 2f64.powf(-2.5));
    }

    #[test]
    fn midpoint_profile_density() {
        let mid = 0.5 + (2.0 - 0.5) / 2.0;
        let k = KernelSpec::constant(2, 1.2, 0.5, ell(), mid).unwrap();
        let v = k.kernel_eval([0.1, 0.2], [0.3, 0.4]).unwrap();
        let expected = 0.8 * 1.25 * 0.5f64.powf(-3.2);
        assert!((v - expected).abs() < 1e-14 * expected);
    }

    #[test]
    fn singular_offset_rejected() {
        let k = KernelSpec::constant(1, 1.5, 0.5, ell(), 1.0).unwrap();
        assert!(matches!(k.kernel_eval([0.0; 2], [0.0; 2]), Err(Error::Domain(_))));
    }

    #[test]
    fn lower_bound_profile_passes_with_equality() {
        let k = KernelSpec::constant(1, 1.5, 0.5, ell(), 0.5).unwrap();
        let r = k.check_ellipticity_bounds(&standard_samples(1)).unwrap();
        assert!(r.pass);
        assert_eq!(r.worst_ratio, 1.0);
        assert_eq!(r.min_coefficient, 0.5);
    }

    #[test]
    fn indicator_profile_passes() {
        let p = Profile::RadialTable {
            radii: vec![1.0],
            values: vec![2.0, 0.5],
        };
        let k = KernelSpec::new(1, 1.5, 0.5, ell(), p).unwrap();
        assert_eq!(k.coefficient([0.0; 2], [0.5, 0.0]), 2.0);
        assert_eq!(k.coefficient([0.0; 2], [1.5, 0.0]), 0.5);
    }

    #[test]
    fn violated_profile_reports_half_ratio() {
        let k = KernelSpec::unchecked(1, 1.5, 0.5, ell(), Profile::Constant { c: 0.25 }).unwrap();
        let r = k.check_ellipticity_bounds(&standard_samples(1)).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst_ratio, 0.5);
        assert!(matches!(k.kernel_eval([0.0; 2], [1.0, 0.0]), Err(Error::Ellipticity { .. })));
        assert!(KernelSpec::new(1, 1.5, 0.5, ell(), Profile::Constant { c: 0.25 }).is_err());
    }

    #[test]
    fn empty_sample_list_is_usage_error() {
        let k = KernelSpec::constant(1, 1.5, 0.5, ell(), 1.0).unwrap();
        assert!(matches!(k.check_ellipticity_bounds(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn weight_values() {
        let w = WeightSpec::new(1, 0.5).unwrap();
        assert_eq!(w.eval([0.0, 0.0]), 1.0);
        assert_eq!(w.eval([1.0, 0.0]), 2f64.powf(-1.5));
        assert!(w.eval([0.5, 0.0]) > w.eval([0.6, 0.0]));
    }

    #[test]
    fn weight_tail_matches_quadrature() {
        for dim in [1, 2] {
            let w = WeightSpec::new(dim, 1.3).unwrap();
            let ang = if dim == 1 { 2.0 } else { 2.0 * std::f64::consts::PI };
            let (r0, r1) = (2.0, 40.0);
            let f = |x: f64| x.powi(dim as i32 - 1) * (1.0 + x).powf(-(dim as f64) - 1.3);
            let q = ang * composite_gauss(r0, r1, 400, 16, f);
            assert!((q - (w.tail_mass(r0) - w.tail_mass(r1))).abs() < 1e-12, "dim {dim}");
            let g = |x: f64| x * f(x);
            let q1 = ang * composite_gauss(r0, r1, 400, 16, g);
            let d1 = w.first_moment_tail(r0) - w.first_moment_tail(r1);
            assert!((q1 - d1).abs() < 1e-10 * q1, "dim {dim}: {q1} vs {d1}");
            assert_eq!(w.tail_mass(f64::INFINITY), 0.0);
        }
    }

    #[test]
    fn cutoff_shape() {
        let c = CutoffMollifierSpec::new(1, 0.2).unwrap();
        assert_eq!(c.cutoff([0.0, 0.0]), 1.0);
        assert_eq!(c.cutoff([0.1, 0.0]), 1.0);
        assert_eq!(c.cutoff([0.4, 0.0]), 0.0);
        let mut prev = 1.0;
        for i in 0..=100 {
            let v = c.cutoff([0.1 + 0.001 * i as f64, 0.0]);
            assert!(v <= prev && (0.0..=1.0).contains(&v));
            prev = v;
        }
        assert!(CutoffMollifierSpec::new(1, 0.0).is_err());
        assert!(CutoffMollifierSpec::new(1, -1.0).is_err());
    }

    #[test]
    fn mollifier_unit_mass_on_grid() {
        for (dim, m) in [(1, 128), (2, 128)] {
            let c = CutoffMollifierSpec::new(dim, 0.1).unwrap();
            let s: f64 = c.mollifier_grid(m).iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-10, "dim {dim}: {s}");
        }
    }
}
