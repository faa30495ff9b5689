//! Nonlocal operators acting on symmetric second differences, their
//! quadrature, and the structural transforms (freezing, rescaling,
//! regularization, splitting, linearization).
//!
//! Every operator is discretized on a shared [`Stencil`]: a list of offsets
//! `y_j` in a half-space with weights `w_j` that already carry the `(2 - σ)`
//! factor, the kernel `|y|^{-n-σ}` and the symmetry doubling. A linear
//! operator is then `Σ_j w_j a(x, y_j) δ_j`, an extremal one
//! `Σ_j w_j (Λ δ_j⁺ - λ δ_j⁻)`, and so on. Because all weights are positive
//! and every coefficient lies in `[λ, Λ]`, the discrete operators satisfy the
//! ellipticity sandwich exactly and are monotone.

use std::borrow::Cow;
use std::collections::HashMap;
use std::io::Write;
use std::ops::Range;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ClosedForm, ExteriorData, Field, Grid, Lattice};
use crate::kernels::{CutoffMollifierSpec, Ellipticity, KernelSpec, Modulation, Profile, WeightSpec};
use crate::numerics::{cell_mass_2d, gauss_legendre, gauss_on, kernel_antiderivative};
use crate::{norm, Point};

/// Class constants shared by all operators of one problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    pub dim: usize,
    pub sigma: f64,
    pub sigma0: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub upper: f64,
}

impl Constants {
    pub fn new(dim: usize, sigma: f64, sigma0: f64, lambda: f64, upper: f64) -> Result<Self> {
        let c = Self {
            dim,
            sigma,
            sigma0,
            lambda,
            upper,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        KernelSpec::unchecked(self.dim, self.sigma, self.sigma0, self.ellipticity()?, Profile::Constant { c: self.lambda })?;
        Ok(())
    }

    pub fn ellipticity(&self) -> Result<Ellipticity> {
        Ellipticity::new(self.lambda, self.upper)
    }

    /// Kernel `c |y|^{-n-σ}` (times `2 - σ`).
    pub fn constant_kernel(&self, c: f64) -> Result<KernelSpec> {
        KernelSpec::constant(self.dim, self.sigma, self.sigma0, self.ellipticity()?, c)
    }
}

/// `ρ̄` profiles of the nonlinear operators `Σ w ρ(δ₂u, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RhoProfile {
    /// `ρ̄(z) = c z`
    Linear { slope: f64 },
    /// `ρ̄(z) = λ z + (Λ-λ) log(1 + e^z) - (Λ-λ) log 2`
    Softplus,
}

/// `ρ(z, y) = |y|^p ρ̄(z |y|^{-p})`, optionally replaced near `y = 0` by
/// `ρ^ε(z, y) = ρ(z (1 - φ_ε(y)), y) + φ_ε(y) λ z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoSpec {
    #[serde(flatten)]
    pub profile: RhoProfile,
    #[serde(default)]
    pub p: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub upper: f64,
    #[serde(default)]
    pub eps: Option<f64>,
}

/// `log(1 + e^z) - log 2`, accurate relative to `z` near 0.
fn softplus_shifted(z: f64) -> f64 {
    if z.abs() < 1.0 {
        (0.5 * z.exp_m1()).ln_1p()
    } else {
        z.max(0.0) + (-z.abs()).exp().ln_1p() - std::f64::consts::LN_2
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl RhoSpec {
    pub fn new(profile: RhoProfile, p: f64, lambda: f64, upper: f64) -> Result<Self> {
        let spec = Self {
            profile,
            p,
            lambda,
            upper,
            eps: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn softplus(lambda: f64, upper: f64) -> Result<Self> {
        Self::new(RhoProfile::Softplus, 0.0, lambda, upper)
    }

    pub fn linear(slope: f64, lambda: f64, upper: f64) -> Result<Self> {
        Self::new(RhoProfile::Linear { slope }, 0.0, lambda, upper)
    }

    pub fn validate(&self) -> Result<()> {
        Ellipticity::new(self.lambda, self.upper)?;
        if !(0.0..=2.0).contains(&self.p) {
            return Err(Error::usage(format!("rho exponent p must lie in [0, 2] (got {})", self.p)));
        }
        if let RhoProfile::Linear { slope } = self.profile {
            if !(slope >= self.lambda && slope <= self.upper) {
                return Err(Error::Ellipticity {
                    value: slope,
                    lower: self.lambda,
                    upper: self.upper,
                });
            }
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0 && eps < 0.25) {
                return Err(Error::usage(format!("eps must lie in (0, 1/4) (got {eps})")));
            }
        }
        Ok(())
    }

    /// Bound on `|ρ̄''|`.
    pub fn c0(&self) -> f64 {
        match self.profile {
            RhoProfile::Linear { .. } => 0.0,
            RhoProfile::Softplus => (self.upper - self.lambda) / 4.0,
        }
    }

    fn bar(&self, z: f64) -> f64 {
        match self.profile {
            RhoProfile::Linear { slope } => slope * z,
            RhoProfile::Softplus => {
                self.lambda * z + (self.upper - self.lambda) * softplus_shifted(z)
            }
        }
    }

    fn bar_d(&self, z: f64) -> f64 {
        match self.profile {
            RhoProfile::Linear { slope } => slope,
            RhoProfile::Softplus => self.lambda + (self.upper - self.lambda) * logistic(z),
        }
    }

    fn bar_dd(&self, z: f64) -> f64 {
        match self.profile {
            RhoProfile::Linear { .. } => 0.0,
            RhoProfile::Softplus => {
                let s = logistic(z);
                (self.upper - self.lambda) * s * (1.0 - s)
            }
        }
    }

    fn plain(&self, z: f64, r: f64) -> f64 {
        if self.p == 0.0 {
            self.bar(z)
        } else {
            let rp = r.powf(self.p);
            rp * self.bar(z / rp)
        }
    }

    fn plain_z(&self, z: f64, r: f64) -> f64 {
        if self.p == 0.0 {
            self.bar_d(z)
        } else {
            self.bar_d(z / r.powf(self.p))
        }
    }

    fn cutoff(&self, r: f64) -> f64 {
        match self.eps {
            Some(eps) => CutoffMollifierSpec::new(1, eps).map(|c| c.cutoff([r, 0.0])).unwrap_or(0.0),
            None => 0.0,
        }
    }

    /// `ρ(z, y)` with `r = |y|`.
    pub fn eval(&self, z: f64, r: f64) -> f64 {
        self.eval_with_cutoff(z, r, self.cutoff(r))
    }

    /// `∂_z ρ(z, y)`.
    pub fn eval_z(&self, z: f64, r: f64) -> f64 {
        self.eval_z_with_cutoff(z, r, self.cutoff(r))
    }

    /// `∂²_z ρ(z, y)`.
    pub fn eval_zz(&self, z: f64, r: f64) -> f64 {
        let phi = self.cutoff(r);
        let zz = z * (1.0 - phi);
        let scale = if self.p == 0.0 { 1.0 } else { r.powf(-self.p) };
        let arg = if self.p == 0.0 { zz } else { zz * scale };
        (1.0 - phi) * (1.0 - phi) * scale * self.bar_dd(arg)
    }

    fn eval_with_cutoff(&self, z: f64, r: f64, phi: f64) -> f64 {
        if phi == 0.0 {
            self.plain(z, r)
        } else {
            self.plain(z * (1.0 - phi), r) + phi * self.lambda * z
        }
    }

    fn eval_z_with_cutoff(&self, z: f64, r: f64, phi: f64) -> f64 {
        if phi == 0.0 {
            self.plain_z(z, r)
        } else {
            (1.0 - phi) * self.plain_z(z * (1.0 - phi), r) + phi * self.lambda
        }
    }

    /// Sampled structural check: `ρ(0, ·) = 0`, `∂_zρ ∈ [λ, Λ]`,
    /// `|∂²_zρ| <= C₀ (1 + |y|^{-2})`.
    pub fn check_structure(&self) -> Result<()> {
        for i in 0..41 {
            let z = -40.0 + 2.0 * i as f64;
            for j in 0..13 {
                let r = 1e-3 * 10f64.powf(j as f64 / 3.0);
                if self.eval(0.0, r) != 0.0 {
                    return Err(Error::usage("rho(0, y) must vanish"));
                }
                let d = self.eval_z(z, r);
                // softplus saturates to the endpoints in floating point
                if !(d >= self.lambda && d <= self.upper) {
                    return Err(Error::Ellipticity {
                        value: d,
                        lower: self.lambda,
                        upper: self.upper,
                    });
                }
                if self.eval_zz(z, r).abs() > self.c0() * (1.0 + r.powi(-2)) * (1.0 + 1e-12) {
                    return Err(Error::usage("second derivative of rho exceeds C0 (1 + |y|^-2)"));
                }
            }
        }
        Ok(())
    }
}

/// Tagged description of a nonlocal operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSpec {
    Linear {
        kernel: KernelSpec,
    },
    ExtremalPlus {
        constants: Constants,
    },
    ExtremalMinus {
        constants: Constants,
    },
    /// `inf_β sup_α L_{αβ}`; `family[β][α]`.
    Isaacs {
        constants: Constants,
        family: Vec<Vec<KernelSpec>>,
    },
    Rho {
        constants: Constants,
        rho: RhoSpec,
    },
    Frozen {
        inner: Box<OperatorSpec>,
        x0: Point,
    },
    Rescaled {
        inner: Box<OperatorSpec>,
        mu: f64,
        gamma: f64,
    },
    Regularized {
        inner: Box<OperatorSpec>,
        eps: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl OperatorSpec {
    pub fn linear(kernel: KernelSpec) -> Self {
        OperatorSpec::Linear { kernel }
    }

    /// `c` times the fractional Laplacian kernel.
    pub fn fractional(constants: Constants, c: f64) -> Result<Self> {
        Ok(OperatorSpec::Linear {
            kernel: constants.constant_kernel(c)?,
        })
    }

    pub fn extremal(sign: Sign, constants: Constants) -> Result<Self> {
        constants.validate()?;
        Ok(match sign {
            Sign::Plus => OperatorSpec::ExtremalPlus { constants },
            Sign::Minus => OperatorSpec::ExtremalMinus { constants },
        })
    }

    pub fn isaacs(constants: Constants, family: Vec<Vec<KernelSpec>>) -> Result<Self> {
        let spec = OperatorSpec::Isaacs { constants, family };
        spec.validate()?;
        Ok(spec)
    }

    /// `sup` over the constant kernels `λ` and `Λ`.
    pub fn isaacs_two_kernel(c: Constants) -> Result<Self> {
        Self::isaacs(c, vec![vec![c.constant_kernel(c.lambda)?, c.constant_kernel(c.upper)?]])
    }

    /// `inf` over two players, each choosing between two kernels:
    /// `{λ, Λ}` constants and `{checkerboard, radial step}`.
    pub fn isaacs_four_kernel(c: Constants) -> Result<Self> {
        let e = c.ellipticity()?;
        let checker = KernelSpec::new(
            c.dim,
            c.sigma,
            c.sigma0,
            e,
            Profile::Checkerboard {
                cell: 0.25,
                low: c.lambda,
                high: c.upper,
            },
        )?;
        let step = KernelSpec::new(
            c.dim,
            c.sigma,
            c.sigma0,
            e,
            Profile::RadialTable {
                radii: vec![0.5],
                values: vec![c.upper, c.lambda],
            },
        )?;
        Self::isaacs(
            c,
            vec![vec![c.constant_kernel(c.lambda)?, c.constant_kernel(c.upper)?], vec![checker, step]],
        )
    }

    /// Linear operator with the Hölder ripple coefficient
    /// `λ + (Λ-λ)(1 + η sin(k·x) cos(|y|)) / 2`.
    pub fn ripple(c: Constants, wave: Point, amplitude: f64) -> Result<Self> {
        Ok(OperatorSpec::Linear {
            kernel: KernelSpec::new(
                c.dim,
                c.sigma,
                c.sigma0,
                c.ellipticity()?,
                Profile::Ripple {
                    wave,
                    amplitude,
                    modulation: Modulation::Cosine { frequency: 1.0 },
                },
            )?,
        })
    }

    pub fn rho(constants: Constants, rho: RhoSpec) -> Result<Self> {
        let spec = OperatorSpec::Rho { constants, rho };
        spec.validate()?;
        Ok(spec)
    }

    pub fn constants(&self) -> Constants {
        match self {
            OperatorSpec::Linear { kernel } => Constants {
                dim: kernel.dim,
                sigma: kernel.sigma,
                sigma0: kernel.sigma0,
                lambda: kernel.ellipticity.lower,
                upper: kernel.ellipticity.upper,
            },
            OperatorSpec::ExtremalPlus { constants }
            | OperatorSpec::ExtremalMinus { constants }
            | OperatorSpec::Isaacs { constants, .. }
            | OperatorSpec::Rho { constants, .. } => *constants,
            OperatorSpec::Frozen { inner, .. }
            | OperatorSpec::Rescaled { inner, .. }
            | OperatorSpec::Regularized { inner, .. } => inner.constants(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OperatorSpec::Linear { kernel } => {
                kernel.check_ellipticity_bounds(&crate::kernels::standard_samples(kernel.dim)).and_then(|r| {
                    if r.pass {
                        Ok(())
                    } else {
                        Err(Error::Ellipticity {
                            value: if r.min_coefficient < kernel.ellipticity.lower {
                                r.min_coefficient
                            } else {
                                r.max_coefficient
                            },
                            lower: kernel.ellipticity.lower,
                            upper: kernel.ellipticity.upper,
                        })
                    }
                })
            }
            OperatorSpec::ExtremalPlus { constants } | OperatorSpec::ExtremalMinus { constants } => constants.validate(),
            OperatorSpec::Isaacs { constants, family } => {
                constants.validate()?;
                if family.is_empty() || family.iter().any(|row| row.is_empty()) {
                    return Err(Error::usage("Isaacs family must be nonempty"));
                }
                for k in family.iter().flatten() {
                    if k.dim != constants.dim || k.sigma != constants.sigma {
                        return Err(Error::usage("Isaacs kernels must share dimension and order"));
                    }
                    if k.ellipticity.lower < constants.lambda || k.ellipticity.upper > constants.upper {
                        return Err(Error::Ellipticity {
                            value: if k.ellipticity.lower < constants.lambda {
                                k.ellipticity.lower
                            } else {
                                k.ellipticity.upper
                            },
                            lower: constants.lambda,
                            upper: constants.upper,
                        });
                    }
                    OperatorSpec::Linear { kernel: k.clone() }.validate()?;
                }
                Ok(())
            }
            OperatorSpec::Rho { constants, rho } => {
                constants.validate()?;
                rho.validate()?;
                if rho.lambda != constants.lambda || rho.upper != constants.upper {
                    return Err(Error::usage("rho constants must match the operator constants"));
                }
                rho.check_structure()
            }
            OperatorSpec::Frozen { inner, .. } => inner.validate(),
            OperatorSpec::Rescaled { inner, mu, gamma } => {
                if !(*mu > 0.0) || !(*gamma > 0.0 && *gamma <= 1.0) {
                    return Err(Error::usage("rescaling needs mu > 0 and 0 < gamma <= 1"));
                }
                inner.validate()
            }
            OperatorSpec::Regularized { inner, eps } => {
                if !(*eps > 0.0 && *eps < 0.25) {
                    return Err(Error::usage(format!("eps must lie in (0, 1/4) (got {eps})")));
                }
                if matches!(**inner, OperatorSpec::Rescaled { .. } | OperatorSpec::Regularized { .. }) {
                    return Err(Error::usage("regularization applies to unscaled, unregularized operators"));
                }
                inner.validate()
            }
        }
    }

    pub fn is_translation_invariant(&self) -> bool {
        match self {
            OperatorSpec::Linear { kernel } => kernel.is_translation_invariant(),
            OperatorSpec::Isaacs { family, .. } => family.iter().flatten().all(|k| k.is_translation_invariant()),
            OperatorSpec::ExtremalPlus { .. } | OperatorSpec::ExtremalMinus { .. } | OperatorSpec::Rho { .. } => true,
            OperatorSpec::Frozen { .. } => true,
            OperatorSpec::Rescaled { inner, .. } | OperatorSpec::Regularized { inner, .. } => {
                inner.is_translation_invariant()
            }
        }
    }

    /// Coefficients read at `x0` everywhere; identity for translation-invariant operators.
    pub fn freeze(&self, x0: Point) -> OperatorSpec {
        if self.is_translation_invariant() {
            return self.clone();
        }
        OperatorSpec::Frozen {
            inner: Box::new(self.clone()),
            x0,
        }
    }

    /// `I_{μ,γ}(u, x) = γ^σ μ I(ũ/μ, γx)` with `ũ(x) = u(x/γ)`.
    pub fn rescale(&self, mu: f64, gamma: f64) -> Result<OperatorSpec> {
        let spec = OperatorSpec::Rescaled {
            inner: Box::new(self.clone()),
            mu,
            gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The operator `J^ε`: kernel replaced by `λ|y|^{-n-σ}` on `B_{ε/2}` and
    /// coefficients clamped to `B_{1-ε}` and mollified in `x`.
    pub fn regularize(&self, eps: f64) -> Result<OperatorSpec> {
        let spec = OperatorSpec::Regularized {
            inner: Box::new(self.clone()),
            eps,
        };
        spec.validate()?;
        Ok(spec)
    }
}

// ---------------------------------------------------------------------------
// Quadrature stencil

/// How the second difference at a stencil node is obtained from the field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tap {
    /// `δ ≈ Σ_i coef_i (u(x+e_i) - 2u(x) + u(x-e_i))`, the second difference
    /// of the local quadratic interpolant.
    Near { coef: [f64; 2] },
    /// Exact lattice second difference with this offset.
    Lattice { offset: Lattice },
    /// `u(x+y) + u(x-y) - 2u(x)` through off-lattice lookup.
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StencilNode {
    pub y: Point,
    pub weight: f64,
    pub tap: Tap,
}

/// Quadrature of `(2-σ) ∫ δ₂u(x,y) a(x,y) |y|^{-n-σ} dy` split into a near
/// field `|y| < r_near`, lattice cells on `r_near <= |y| < R_out` and a far
/// field `|y| >= R_out`.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub grid: Grid,
    pub sigma: f64,
    pub r_near: f64,
    pub nodes: Vec<StencilNode>,
    pub near: Range<usize>,
    pub mid: Range<usize>,
    pub far: Range<usize>,
    weights: Vec<f64>,
    radii: Vec<f64>,
}

const NEAR_RADIAL: usize = 6;
const NEAR_ANGLES: usize = 8;
const FAR_PANELS: usize = 4;
const FAR_ORDER: usize = 8;
const FAR_TAIL_ORDER: usize = 16;
const FAR_ANGLES: usize = 32;

type StencilKey = (usize, u64, u64, u64);

fn stencil_cache() -> &'static Mutex<HashMap<StencilKey, Arc<Stencil>>> {
    static CACHE: OnceLock<Mutex<HashMap<StencilKey, Arc<Stencil>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Weights `w_o` with `Σ w_o δ(o h) = ∫_{r_near}^{R} P(y) y^{-1-σ} dy`, where `P`
/// is the piecewise quadratic interpolant of `δ` on the lattice. Cells cut by
/// either radius use the three nodes on their uncut side.
fn product_weights_1d(h: f64, r_near: f64, r_out: f64, sigma: f64) -> Vec<(i64, f64)> {
    let first = (r_near / h).round() as i64;
    let last = (r_out / h - 0.5).ceil() as i64;
    let mut w = vec![0.0; (last + 3).max(0) as usize];
    let (gx, gw) = gauss_legendre(8);
    for c in first..=last {
        let lo = ((c as f64 - 0.5) * h).max(r_near);
        let hi = ((c as f64 + 0.5) * h).min(r_out);
        if hi <= lo {
            continue;
        }
        let cut_in = lo > (c as f64 - 0.5) * h;
        let cut_out = hi < (c as f64 + 0.5) * h;
        let base = if cut_in {
            c
        } else if cut_out && c - 2 >= first {
            c - 2
        } else {
            c - 1
        };
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (x, wx) in gx.iter().zip(&gw) {
            let y = mid + half * x;
            let k = wx * half * y.powf(-1.0 - sigma);
            let s = y / h - base as f64;
            let l = [
                0.5 * (s - 1.0) * (s - 2.0),
                s * (2.0 - s),
                0.5 * s * (s - 1.0),
            ];
            for (i, li) in l.iter().enumerate() {
                w[(base + i as i64) as usize] += li * k;
            }
        }
    }
    w.into_iter()
        .enumerate()
        .filter(|(_, v)| *v != 0.0)
        .map(|(o, v)| (o as i64, v))
        .collect()
}

impl Stencil {
    /// Shared, cached stencil for `(grid, σ)`.
    pub fn get(grid: &Grid, sigma: f64) -> Arc<Stencil> {
        let key = (grid.dim, grid.h.to_bits(), grid.r_out.to_bits(), sigma.to_bits());
        if let Some(s) = stencil_cache().lock().unwrap().get(&key) {
            return s.clone();
        }
        let built = Arc::new(Self::build(*grid, sigma));
        let mut cache = stencil_cache().lock().unwrap();
        if cache.len() > 64 {
            cache.clear();
        }
        cache.entry(key).or_insert(built).clone()
    }

    fn build(grid: Grid, sigma: f64) -> Stencil {
        let h = grid.h;
        let r_near = 2.0 * h;
        let r_out = grid.r_out;
        let two = 2.0 - sigma;
        let mut nodes = Vec::new();

        // near field: δ₂ = t² Q(θ); with s = t^{2-σ} the radial integral
        // (2-σ) ∫ t^{1-σ} Q dt becomes ∫ Q ds
        for (s, ws) in gauss_on(0.0, r_near.powf(two), NEAR_RADIAL) {
            let t = s.powf(1.0 / two);
            if grid.dim == 1 {
                nodes.push(StencilNode {
                    y: [t, 0.0],
                    weight: 2.0 * ws / (t * t),
                    tap: Tap::Near {
                        coef: [t * t / (h * h), 0.0],
                    },
                });
            } else {
                for k in 0..NEAR_ANGLES {
                    let th = (k as f64 + 0.5) * std::f64::consts::PI / NEAR_ANGLES as f64;
                    let (sn, cs) = th.sin_cos();
                    nodes.push(StencilNode {
                        y: [t * cs, t * sn],
                        weight: 2.0 * std::f64::consts::PI / NEAR_ANGLES as f64 * ws / (t * t),
                        tap: Tap::Near {
                            coef: [t * t * cs * cs / (h * h), t * t * sn * sn / (h * h)],
                        },
                    });
                }
            }
        }
        let near = 0..nodes.len();

        // lattice cells clipped to the annulus, exact kernel mass per cell
        let phi = kernel_antiderivative(sigma);
        let m = (r_out / h).ceil() as i64 + 1;
        if grid.dim == 1 {
            for (o, w) in product_weights_1d(h, r_near, r_out, sigma) {
                nodes.push(StencilNode {
                    y: [o as f64 * h, 0.0],
                    weight: 2.0 * two * w,
                    tap: Tap::Lattice { offset: [o, 0] },
                });
            }
        } else {
            let half_diag = h * std::f64::consts::FRAC_1_SQRT_2;
            let offsets: Vec<Lattice> = (0..=m)
                .flat_map(|j| (-m..=m).map(move |i| [i, j]))
                .filter(|o| o[1] > 0 || o[0] > 0)
                .collect();
            let mid: Vec<StencilNode> = offsets
                .par_iter()
                .filter_map(|o| {
                    let c = [o[0] as f64 * h, o[1] as f64 * h];
                    let r = norm(c);
                    if r - half_diag >= r_out || r + half_diag <= r_near {
                        return None;
                    }
                    let mass = cell_mass_2d(c, h, r_near, r_out, &phi);
                    (mass > 0.0).then(|| StencilNode {
                        y: c,
                        weight: 2.0 * two * mass,
                        tap: Tap::Lattice { offset: *o },
                    })
                })
                .collect();
            nodes.extend(mid);
        }
        let mid = near.end..nodes.len();

        // far field: Gauss panels on [R, R+span], then s = r^{-σ} on the tail;
        // in 1D the panels reach 8R so oscillating coefficients are resolved
        let mut radial: Vec<(f64, f64)> = Vec::new();
        let (span, panels) = if grid.dim == 1 {
            let span = 7.0 * r_out;
            (span, (2.0 * span).ceil() as usize)
        } else {
            (2.0, FAR_PANELS)
        };
        let width = span / panels as f64;
        for p in 0..panels {
            let a = r_out + p as f64 * width;
            for (r, w) in gauss_on(a, a + width, FAR_ORDER) {
                radial.push((r, w * r.powf(-1.0 - sigma)));
            }
        }
        let top = (r_out + span).powf(-sigma);
        for (s, w) in gauss_on(0.0, top, FAR_TAIL_ORDER) {
            radial.push((s.powf(-1.0 / sigma), w / sigma));
        }
        for (r, w) in radial {
            if grid.dim == 1 {
                nodes.push(StencilNode {
                    y: [r, 0.0],
                    weight: 2.0 * two * w,
                    tap: Tap::Off,
                });
            } else {
                for k in 0..FAR_ANGLES {
                    let th = k as f64 * std::f64::consts::PI / FAR_ANGLES as f64;
                    let (sn, cs) = th.sin_cos();
                    nodes.push(StencilNode {
                        y: [r * cs, r * sn],
                        weight: two * 2.0 * std::f64::consts::PI / FAR_ANGLES as f64 * w,
                        tap: Tap::Off,
                    });
                }
            }
        }
        let far = mid.end..nodes.len();
        let weights = nodes.iter().map(|n| n.weight).collect();
        let radii = nodes.iter().map(|n| norm(n.y)).collect();
        Stencil {
            grid,
            sigma,
            r_near,
            nodes,
            near,
            mid,
            far,
            weights,
            radii,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Second differences of `u` at lattice node `k` for every stencil node.
    pub fn deltas(&self, u: &Field, k: Lattice) -> Vec<f64> {
        let x = self.grid.point(k);
        let u0 = u.lattice_value(k);
        let axis = |e: Lattice| u.lattice_value([k[0] + e[0], k[1] + e[1]]) - 2.0 * u0 + u.lattice_value([k[0] - e[0], k[1] - e[1]]);
        let d = [axis([1, 0]), if self.grid.dim == 2 { axis([0, 1]) } else { 0.0 }];
        self.nodes
            .iter()
            .map(|n| match n.tap {
                Tap::Near { coef } => coef[0] * d[0] + coef[1] * d[1],
                Tap::Lattice { offset } => {
                    u.lattice_value([k[0] + offset[0], k[1] + offset[1]]) - 2.0 * u0
                        + u.lattice_value([k[0] - offset[0], k[1] - offset[1]])
                }
                Tap::Off => {
                    u.value_at([x[0] + n.y[0], x[1] + n.y[1]]) + u.value_at([x[0] - n.y[0], x[1] - n.y[1]]) - 2.0 * u0
                }
            })
            .collect()
    }

    /// `|∂δ_j/∂u(x)|` summed against the weights: the diagonal mass of the
    /// fractional Laplacian row.
    pub fn diagonal_mass(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| match n.tap {
                Tap::Near { coef } => 2.0 * n.weight * (coef[0] + coef[1]),
                _ => 2.0 * n.weight,
            })
            .sum()
    }

    /// Linear dependence of `δ_j` at node `k` on field values: calls
    /// `f(target, coefficient)` for each contribution.
    pub fn for_each_tap(&self, j: usize, k: Lattice, mut f: impl FnMut(TapTarget, f64)) {
        let g = &self.grid;
        let node = |q: Lattice| match g.index(q) {
            Some(i) => TapTarget::Node(i),
            None => TapTarget::Point(g.point(q)),
        };
        let n = &self.nodes[j];
        match n.tap {
            Tap::Near { coef } => {
                for (a, c) in coef.iter().enumerate() {
                    if *c == 0.0 {
                        continue;
                    }
                    let e: Lattice = if a == 0 { [1, 0] } else { [0, 1] };
                    f(node([k[0] + e[0], k[1] + e[1]]), *c);
                    f(node([k[0] - e[0], k[1] - e[1]]), *c);
                    f(node(k), -2.0 * c);
                }
            }
            Tap::Lattice { offset } => {
                f(node([k[0] + offset[0], k[1] + offset[1]]), 1.0);
                f(node([k[0] - offset[0], k[1] - offset[1]]), 1.0);
                f(node(k), -2.0);
            }
            Tap::Off => {
                let x = g.point(k);
                for s in [1.0, -1.0] {
                    let p = [x[0] + s * n.y[0], x[1] + s * n.y[1]];
                    if g.in_box(p) {
                        for (i, w) in g.interp_stencil(p) {
                            f(TapTarget::Node(i), w);
                        }
                    } else {
                        f(TapTarget::Point(p), 1.0);
                    }
                }
                f(node(k), -2.0);
            }
        }
    }
}

/// Where a stencil contribution reads its value from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TapTarget {
    Node(usize),
    /// Outside the lattice box: the exterior closed form.
    Point(Point),
}

// ---------------------------------------------------------------------------
// Prepared operators

enum CoefTable {
    Fixed(Vec<f64>),
    Ripple {
        lower: f64,
        upper: f64,
        wave: Point,
        amplitude: f64,
        psi: Vec<f64>,
    },
}

impl CoefTable {
    fn new(kernel: &KernelSpec, st: &Stencil) -> Self {
        match &kernel.profile {
            Profile::Ripple {
                wave,
                amplitude,
                modulation,
            } if !kernel.is_translation_invariant() => CoefTable::Ripple {
                lower: kernel.ellipticity.lower,
                upper: kernel.ellipticity.upper,
                wave: *wave,
                amplitude: *amplitude,
                psi: st.nodes.iter().map(|n| modulation.eval(n.y)).collect(),
            },
            _ => CoefTable::Fixed(st.nodes.iter().map(|n| kernel.coefficient([0.0, 0.0], n.y)).collect()),
        }
    }

    fn row(&self, z: Point) -> Cow<'_, [f64]> {
        match self {
            CoefTable::Fixed(v) => Cow::Borrowed(v),
            CoefTable::Ripple {
                lower,
                upper,
                wave,
                amplitude,
                psi,
            } => {
                let s = amplitude * (wave[0] * z[0] + wave[1] * z[1]).sin();
                Cow::Owned(psi.iter().map(|p| lower + (upper - lower) * (1.0 + s * p) / 2.0).collect())
            }
        }
    }
}

enum Kind {
    Linear(CoefTable),
    Plus { lambda: f64, upper: f64 },
    Minus { lambda: f64, upper: f64 },
    Isaacs(Vec<Vec<CoefTable>>),
    Rho { rho: RhoSpec, phi: Vec<f64> },
    Frozen { inner: Box<Kind>, x0: Point },
    Regularized {
        inner: Box<Kind>,
        lambda: f64,
        eps: f64,
        phi: Vec<f64>,
        mollifier: Vec<(Point, f64)>,
    },
}

enum Body {
    Local(Kind),
    Rescaled { inner: Box<Operator>, mu: f64, gamma: f64 },
}

/// What [`Operator::local`] returns alongside the value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Want {
    Value,
    /// Multipliers `e_j` with `value = Σ w_j e_j δ_j` (secant slopes).
    Effective,
    /// `∂ value / ∂δ_j` divided by `w_j`.
    Derivative,
}

/// Mollifier grid resolution per radius used inside the regularized operator.
const MOLLIFIER_STEPS: [usize; 2] = [32, 6];

/// An operator specification prepared for a particular grid.
pub struct Operator {
    spec: OperatorSpec,
    grid: Grid,
    stencil: Arc<Stencil>,
    body: Body,
}

fn clamp_point(z: Point, eps: f64) -> Point {
    let r = norm(z);
    if r > 1.0 - eps {
        let s = (1.0 - eps) / r;
        [z[0] * s, z[1] * s]
    } else {
        z
    }
}

impl Operator {
    pub fn new(spec: &OperatorSpec, grid: Grid) -> Result<Self> {
        spec.validate()?;
        let c = spec.constants();
        if c.dim != grid.dim {
            return Err(Error::usage("operator and grid dimensions differ"));
        }
        let stencil = Stencil::get(&grid, c.sigma);
        let body = match spec {
            OperatorSpec::Rescaled { inner, mu, gamma } => {
                let companion = Grid::new(grid.dim, grid.h * gamma, grid.r_out)?;
                Body::Rescaled {
                    inner: Box::new(Operator::new(inner, companion)?),
                    mu: *mu,
                    gamma: *gamma,
                }
            }
            _ => Body::Local(Self::kind(spec, &stencil)?),
        };
        Ok(Self {
            spec: spec.clone(),
            grid,
            stencil,
            body,
        })
    }

    fn kind(spec: &OperatorSpec, st: &Stencil) -> Result<Kind> {
        Ok(match spec {
            OperatorSpec::Linear { kernel } => Kind::Linear(CoefTable::new(kernel, st)),
            OperatorSpec::ExtremalPlus { constants } => Kind::Plus {
                lambda: constants.lambda,
                upper: constants.upper,
            },
            OperatorSpec::ExtremalMinus { constants } => Kind::Minus {
                lambda: constants.lambda,
                upper: constants.upper,
            },
            OperatorSpec::Isaacs { family, .. } => Kind::Isaacs(
                family
                    .iter()
                    .map(|row| row.iter().map(|k| CoefTable::new(k, st)).collect())
                    .collect(),
            ),
            OperatorSpec::Rho { rho, .. } => Kind::Rho {
                rho: rho.clone(),
                phi: st.radii.iter().map(|r| rho.cutoff(*r)).collect(),
            },
            OperatorSpec::Frozen { inner, x0 } => Kind::Frozen {
                inner: Box::new(Self::kind(inner, st)?),
                x0: *x0,
            },
            OperatorSpec::Regularized { inner, eps } => {
                let c = inner.constants();
                let cm = CutoffMollifierSpec::new(c.dim, *eps)?;
                let mollifier = if inner.is_translation_invariant() {
                    Vec::new()
                } else {
                    let raw = cm.mollifier_grid(MOLLIFIER_STEPS[c.dim - 1]);
                    let total: f64 = raw.iter().map(|(_, w)| w).sum();
                    raw.into_iter().map(|(p, w)| (p, w / total)).collect()
                };
                Kind::Regularized {
                    inner: Box::new(Self::kind(inner, st)?),
                    lambda: c.lambda,
                    eps: *eps,
                    phi: st.nodes.iter().map(|n| cm.cutoff(n.y)).collect(),
                    mollifier,
                }
            }
            OperatorSpec::Rescaled { .. } => {
                return Err(Error::usage("rescaled operators cannot be nested inside local transforms"))
            }
        })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn stencil(&self) -> &Arc<Stencil> {
        &self.stencil
    }

    pub fn is_local(&self) -> bool {
        matches!(self.body, Body::Local(_))
    }

    fn check_node(&self, u: &Field, node: usize) -> Result<Lattice> {
        if u.grid != self.grid {
            return Err(Error::usage("field and operator grids differ"));
        }
        if node >= self.grid.len() {
            return Err(Error::Evaluation {
                node,
                message: "node index out of range".into(),
            });
        }
        let k = self.grid.lattice(node);
        let m = self.grid.half_width();
        if k[0].abs() >= m || k[1].abs() >= m {
            return Err(Error::Evaluation {
                node,
                message: "near-field stencil leaves the lattice box".into(),
            });
        }
        Ok(k)
    }

    fn companion(&self, u: &Field, inner: &Operator, mu: f64, gamma: f64) -> Result<Field> {
        let cg = inner.grid;
        let values = (0..cg.len()).map(|i| u.lattice_value(cg.lattice(i)) / mu).collect();
        let form = ClosedForm::Transformed {
            inner: Box::new(u.exterior.form.clone()),
            shift: [0.0, 0.0],
            dilation: gamma,
            amplitude: 1.0 / mu,
        };
        Field::from_parts(cg, values, ExteriorData::new(form)?)
    }

    /// `I(u, x)` at a lattice node.
    pub fn eval(&self, u: &Field, node: usize) -> Result<f64> {
        Ok(self.eval_nodes(u, &[node])?[0])
    }

    /// `I(u, x)` at several nodes, in parallel with a fixed per-node order.
    pub fn eval_nodes(&self, u: &Field, nodes: &[usize]) -> Result<Vec<f64>> {
        match &self.body {
            Body::Local(_) => nodes.par_iter().map(|&i| self.local(u, i, Want::Value).map(|r| r.0)).collect(),
            Body::Rescaled { inner, mu, gamma } => {
                for &i in nodes {
                    self.check_node(u, i)?;
                }
                let ut = self.companion(u, inner, *mu, *gamma)?;
                let scale = gamma.powf(self.spec.constants().sigma) * mu;
                nodes
                    .par_iter()
                    .map(|&i| {
                        let k = self.grid.lattice(i);
                        let j = inner.grid.index(k).expect("companion grid covers the original lattice");
                        inner.eval_nodes(&ut, &[j]).map(|v| scale * v[0])
                    })
                    .collect()
            }
        }
    }

    /// Values at all interior nodes (`|x| < 1`), in lattice order.
    pub fn eval_interior(&self, u: &Field) -> Result<(Vec<usize>, Vec<f64>)> {
        let nodes = self.grid.interior_nodes();
        let vals = self.eval_nodes(u, &nodes)?;
        Ok((nodes, vals))
    }

    /// Value plus per-stencil-node multipliers at one node (local operators only).
    pub fn local(&self, u: &Field, node: usize, want: Want) -> Result<(f64, Option<Vec<f64>>)> {
        let k = self.check_node(u, node)?;
        let kind = match &self.body {
            Body::Local(kind) => kind,
            Body::Rescaled { .. } => return Err(Error::usage("multipliers are not available for rescaled operators")),
        };
        let d = self.stencil.deltas(u, k);
        let out = self.apply(kind, self.grid.point(k), &d, want);
        if !out.0.is_finite() {
            return Err(Error::Evaluation {
                node,
                message: "non-finite operator value".into(),
            });
        }
        Ok(out)
    }

    /// Values of each linear constituent `L_{αβ} u(x)` for an Isaacs operator.
    pub fn family_values(&self, u: &Field, node: usize) -> Result<Vec<Vec<f64>>> {
        let k = self.check_node(u, node)?;
        let Body::Local(Kind::Isaacs(fam)) = &self.body else {
            return Err(Error::usage("family values need an Isaacs operator"));
        };
        let d = self.stencil.deltas(u, k);
        let z = self.grid.point(k);
        Ok(fam
            .iter()
            .map(|row| row.iter().map(|t| dot3(&self.stencil.weights, &t.row(z), &d)).collect())
            .collect())
    }

    /// Coefficient row `a_{αβ}(x, y_j)` of an Isaacs constituent.
    pub fn family_row(&self, beta: usize, alpha: usize, z: Point) -> Result<Vec<f64>> {
        let Body::Local(Kind::Isaacs(fam)) = &self.body else {
            return Err(Error::usage("family rows need an Isaacs operator"));
        };
        Ok(fam[beta][alpha].row(z).into_owned())
    }

    /// Coefficient row of a linear operator at `z`.
    pub fn linear_row(&self, z: Point) -> Result<Vec<f64>> {
        match &self.body {
            Body::Local(Kind::Linear(t)) => Ok(t.row(z).into_owned()),
            Body::Local(Kind::Frozen { inner, x0 }) => match &**inner {
                Kind::Linear(t) => Ok(t.row(*x0).into_owned()),
                _ => Err(Error::usage("coefficient rows need a linear operator")),
            },
            _ => Err(Error::usage("coefficient rows need a linear operator")),
        }
    }

    fn apply(&self, kind: &Kind, z: Point, d: &[f64], want: Want) -> (f64, Option<Vec<f64>>) {
        let w = &self.stencil.weights;
        let collect = want != Want::Value;
        match kind {
            Kind::Linear(t) => {
                let a = t.row(z);
                (dot3(w, &a, d), collect.then(|| a.into_owned()))
            }
            Kind::Plus { lambda, upper } | Kind::Minus { lambda, upper } => {
                let (pos, neg) = if matches!(kind, Kind::Plus { .. }) {
                    (*upper, *lambda)
                } else {
                    (*lambda, *upper)
                };
                let mut v = 0.0;
                let mut e = if collect { Vec::with_capacity(d.len()) } else { Vec::new() };
                for (wj, dj) in w.iter().zip(d) {
                    let c = if *dj > 0.0 { pos } else { neg };
                    v += wj * c * dj;
                    if collect {
                        e.push(c);
                    }
                }
                (v, collect.then_some(e))
            }
            Kind::Isaacs(fam) => {
                let mut best: Option<(f64, usize, usize)> = None;
                for (b, row) in fam.iter().enumerate() {
                    let mut top: Option<(f64, usize)> = None;
                    for (a, t) in row.iter().enumerate() {
                        let v = dot3(w, &t.row(z), d);
                        if top.map_or(true, |(tv, _)| v > tv) {
                            top = Some((v, a));
                        }
                    }
                    let (tv, ta) = top.unwrap();
                    if best.map_or(true, |(bv, _, _)| tv < bv) {
                        best = Some((tv, b, ta));
                    }
                }
                let (v, b, a) = best.unwrap();
                (v, collect.then(|| fam[b][a].row(z).into_owned()))
            }
            Kind::Rho { rho, phi } => {
                let r = &self.stencil.radii;
                let mut v = 0.0;
                let mut e = if collect { Vec::with_capacity(d.len()) } else { Vec::new() };
                for j in 0..d.len() {
                    let val = rho.eval_with_cutoff(d[j], r[j], phi[j]);
                    v += w[j] * val;
                    match want {
                        Want::Value => {}
                        Want::Effective => e.push(if d[j] != 0.0 {
                            val / d[j]
                        } else {
                            rho.eval_z_with_cutoff(0.0, r[j], phi[j])
                        }),
                        Want::Derivative => e.push(rho.eval_z_with_cutoff(d[j], r[j], phi[j])),
                    }
                }
                (v, collect.then_some(e))
            }
            Kind::Frozen { inner, x0 } => self.apply(inner, *x0, d, want),
            Kind::Regularized {
                inner,
                lambda,
                eps,
                phi,
                mollifier,
            } => {
                let cut: Vec<f64> = d.iter().zip(phi).map(|(dj, p)| dj * (1.0 - p)).collect();
                let (mut v, mut e) = if mollifier.is_empty() {
                    self.apply(inner, clamp_point(z, *eps), &cut, want)
                } else {
                    let mut v = 0.0;
                    let mut e: Option<Vec<f64>> = collect.then(|| vec![0.0; d.len()]);
                    for (m, nu) in mollifier {
                        let zm = clamp_point([z[0] - m[0], z[1] - m[1]], *eps);
                        let (vi, ei) = self.apply(inner, zm, &cut, want);
                        v += nu * vi;
                        if let (Some(acc), Some(ei)) = (e.as_mut(), ei) {
                            for (a, b) in acc.iter_mut().zip(ei) {
                                *a += nu * b;
                            }
                        }
                    }
                    (v, e)
                };
                for j in 0..d.len() {
                    v += lambda * w[j] * phi[j] * d[j];
                }
                if let Some(e) = e.as_mut() {
                    for j in 0..d.len() {
                        e[j] = (1.0 - phi[j]) * e[j] + lambda * phi[j];
                    }
                }
                (v, e)
            }
        }
    }

    /// Per-stencil-node integrand table at one node.
    pub fn integrand_trace(&self, u: &Field, node: usize) -> Result<Vec<TraceRow>> {
        let k = self.check_node(u, node)?;
        let (_, e) = self.local(u, node, Want::Effective)?;
        let e = e.expect("effective multipliers requested");
        let d = self.stencil.deltas(u, k);
        let st = &self.stencil;
        Ok(st
            .nodes
            .iter()
            .enumerate()
            .map(|(j, n)| TraceRow {
                region: if st.near.contains(&j) {
                    "near"
                } else if st.mid.contains(&j) {
                    "mid"
                } else {
                    "far"
                },
                y: n.y,
                weight: n.weight,
                coefficient: e[j],
                delta: d[j],
                contribution: n.weight * e[j] * d[j],
            })
            .collect())
    }
}

fn dot3(w: &[f64], a: &[f64], d: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..d.len() {
        s += w[j] * a[j] * d[j];
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub region: &'static str,
    pub y: Point,
    pub weight: f64,
    pub coefficient: f64,
    pub delta: f64,
    pub contribution: f64,
}

pub fn write_trace_csv(rows: &[TraceRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "region,y1,y2,weight,coefficient,delta,contribution")?;
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.region, r.y[0], r.y[1], r.weight, r.coefficient, r.delta, r.contribution
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Spec-level entry points

pub fn eval(spec: &OperatorSpec, u: &Field, node: usize) -> Result<f64> {
    Operator::new(spec, u.grid)?.eval(u, node)
}

pub fn eval_linear(spec: &OperatorSpec, u: &Field, node: usize) -> Result<f64> {
    if !matches!(spec, OperatorSpec::Linear { .. }) {
        return Err(Error::usage("eval_linear needs a linear operator"));
    }
    eval(spec, u, node)
}

pub fn eval_extremal(sign: Sign, constants: Constants, u: &Field, node: usize) -> Result<f64> {
    eval(&OperatorSpec::extremal(sign, constants)?, u, node)
}

pub fn eval_isaacs(spec: &OperatorSpec, u: &Field, node: usize) -> Result<f64> {
    if !matches!(spec, OperatorSpec::Isaacs { .. }) {
        return Err(Error::usage("eval_isaacs needs an Isaacs operator"));
    }
    eval(spec, u, node)
}

pub fn eval_rho(spec: &OperatorSpec, u: &Field, node: usize) -> Result<f64> {
    if !matches!(spec, OperatorSpec::Rho { .. }) {
        return Err(Error::usage("eval_rho needs a rho operator"));
    }
    eval(spec, u, node)
}

/// Value on `B₁` of `(2-σ)∫δ₂u |y|^{-n-σ}` for `u = (1-|x|²)₊^{σ/2}`.
pub fn ball_profile_image(dim: usize, sigma: f64) -> f64 {
    use statrs::function::gamma::gamma;
    let n = dim as f64;
    let s = 0.5 * sigma;
    let c = 4f64.powf(s) * gamma(0.5 * n + s) / (std::f64::consts::PI.powf(0.5 * n) * gamma(-s).abs());
    let k = 4f64.powf(s) * gamma(1.0 + s) * gamma(0.5 * n + s) / gamma(0.5 * n);
    -(2.0 - sigma) * 2.0 / c * k
}

/// `(2-σ) ∫ δ₂u |y|^{-n-σ} dy`, i.e. `-(-Δ)^{σ/2} u` up to the normalizing
/// constant, under the same quadrature.
pub fn fractional_laplacian(constants: Constants, u: &Field, node: usize) -> Result<f64> {
    eval(&OperatorSpec::fractional(constants, 1.0)?, u, node)
}

/// Splits `J^ε(u, x) = C₀ L(u, x) + F(u, x)` with `L` the fractional Laplacian
/// quadrature above and `C₀ = λ`. Returns `(F, C₀)`.
pub fn split_f(spec: &OperatorSpec, u: &Field, node: usize) -> Result<(f64, f64)> {
    let OperatorSpec::Regularized { .. } = spec else {
        return Err(Error::usage("split_F needs a regularized operator"));
    };
    let c = spec.constants();
    let j = eval(spec, u, node)?;
    let l = fractional_laplacian(c, u, node)?;
    Ok((j - c.lambda * l, c.lambda))
}

/// Averaged derivative coefficients of a `ρ` operator on the stencil.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefficientTable {
    pub nodes: Vec<usize>,
    pub offsets: Vec<Point>,
    /// `values[i][j]` is `a(x_i, y_j)`.
    pub values: Vec<Vec<f64>>,
}

/// `a(x, y) = ∫₀¹ ∂_zρ(t δ₂u(x+h, y) + (1-t) δ₂u(x, y), y) dt`, 16-point
/// Gauss–Legendre in `t`, at every interior node.
pub fn linearize_rho(spec: &OperatorSpec, u: &Field, shift: Lattice) -> Result<CoefficientTable> {
    let OperatorSpec::Rho { rho, .. } = spec else {
        return Err(Error::usage("linearize_rho needs a rho operator"));
    };
    let grid = u.grid;
    let hv = grid.point(shift);
    if norm(hv) >= 0.5 {
        return Err(Error::usage("linearization shift must satisfy |h| < 1/2"));
    }
    let st = Stencil::get(&grid, spec.constants().sigma);
    let (ts, ws) = gauss_legendre(16);
    let nodes = grid.interior_nodes();
    let values: Result<Vec<Vec<f64>>> = nodes
        .par_iter()
        .map(|&i| {
            let k = grid.lattice(i);
            let d0 = st.deltas(u, k);
            let d1 = if shift == [0, 0] {
                d0.clone()
            } else {
                st.deltas(u, [k[0] + shift[0], k[1] + shift[1]])
            };
            (0..st.len())
                .map(|j| {
                    let r = st.radii[j];
                    let mut a = 0.0;
                    if d0[j] == d1[j] {
                        a = rho.eval_z(d0[j], r);
                    } else {
                        for (t, w) in ts.iter().zip(&ws) {
                            let t = 0.5 * (t + 1.0);
                            a += 0.5 * w * rho.eval_z(t * d1[j] + (1.0 - t) * d0[j], r);
                        }
                    }
                    if !(a >= rho.lambda && a <= rho.upper) {
                        return Err(Error::Ellipticity {
                            value: a,
                            lower: rho.lambda,
                            upper: rho.upper,
                        });
                    }
                    Ok(a)
                })
                .collect()
        })
        .collect();
    Ok(CoefficientTable {
        nodes,
        offsets: st.nodes.iter().map(|n| n.y).collect(),
        values: values?,
    })
}

/// One member of the fixed probe family used by [`operator_distance`].
#[derive(Clone, Debug)]
pub struct ProbeFunction {
    pub form: ClosedForm,
    /// Declared bound `M`: both the weighted `L¹` norm and the `C^{1,1}`
    /// constant are at most `M`.
    pub m: f64,
}

/// Smooth bumps and truncated quadratics at 9 centres and 4 widths,
/// evaluated under dilations `γ ∈ {1, 1/2, 1/4}`.
#[derive(Clone, Debug)]
pub struct ProbeFamily {
    pub probes: Vec<ProbeFunction>,
    pub dilations: Vec<f64>,
}

impl ProbeFamily {
    pub fn standard(dim: usize, sigma0: f64) -> Result<Self> {
        let centers: Vec<Point> = if dim == 1 {
            (0..9).map(|i| [-0.4 + 0.1 * i as f64, 0.0]).collect()
        } else {
            (0..9).map(|i| [-0.3 + 0.3 * (i % 3) as f64, -0.3 + 0.3 * (i / 3) as f64]).collect()
        };
        let widths = [0.25, 0.5, 0.75, 1.0];
        let k = crate::probes::bump_curvature_constant();
        let w = WeightSpec::new(dim, sigma0)?;
        let mut probes = Vec::new();
        for c in &centers {
            for r in widths {
                let bump = ClosedForm::Bump {
                    center: *c,
                    radius: r,
                    amplitude: 1.0,
                };
                let quad = ClosedForm::TruncatedQuadratic {
                    center: *c,
                    radius: r,
                    amplitude: 1.0,
                };
                // generous L¹(ω) bounds: sup |u| times the mass of ω
                let omega = w.tail_mass(0.0);
                probes.push(ProbeFunction {
                    form: bump,
                    m: (k / (r * r) / 2.0).max(omega),
                });
                probes.push(ProbeFunction {
                    form: quad,
                    m: 1.0f64.max(r * r * omega),
                });
            }
        }
        Ok(Self {
            probes,
            dilations: vec![1.0, 0.5, 0.25],
        })
    }
}

/// Probe-based estimate of the scale-invariant distance between two operators.
/// It is a lower bound for the true norm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceEstimate {
    pub value: f64,
    pub probe: usize,
    pub dilation: f64,
    pub node: usize,
}

pub fn operator_distance(i_spec: &OperatorSpec, j_spec: &OperatorSpec, family: &ProbeFamily, grid: Grid) -> Result<DistanceEstimate> {
    let interior = grid.interior_nodes();
    let stride = (interior.len() / 9).max(1);
    let nodes: Vec<usize> = interior.iter().copied().step_by(stride).collect();
    let mut best = DistanceEstimate {
        value: 0.0,
        probe: 0,
        dilation: 1.0,
        node: nodes[0],
    };
    for &gamma in &family.dilations {
        let (a, b) = if gamma == 1.0 {
            (Operator::new(i_spec, grid)?, Operator::new(j_spec, grid)?)
        } else {
            (
                Operator::new(&i_spec.rescale(1.0, gamma)?, grid)?,
                Operator::new(&j_spec.rescale(1.0, gamma)?, grid)?,
            )
        };
        for (p, probe) in family.probes.iter().enumerate() {
            let u = Field::sample(grid, &probe.form, ExteriorData::new(probe.form.clone())?)?;
            let va = a.eval_nodes(&u, &nodes)?;
            let vb = b.eval_nodes(&u, &nodes)?;
            for (n, (x, y)) in va.iter().zip(&vb).enumerate() {
                let v = (x - y).abs() / (1.0 + probe.m);
                if v > best.value {
                    best = DistanceEstimate {
                        value: v,
                        probe: p,
                        dilation: gamma,
                        node: nodes[n],
                    };
                }
            }
        }
    }
    Ok(best)
}
