//! Scenario presets and resolution of a configuration into a problem.

use serde::Serialize;
use sigmalab::diagnostics::{default_s_grid, DiagnosticsConfig};
use sigmalab::fields::{ClosedForm, ExteriorData, Grid};
use sigmalab::kernels::Profile;
use sigmalab::operators::{Constants, OperatorSpec, RhoProfile, RhoSpec, Sign};
use sigmalab::solvers::BVPProblem;
use std::f64::consts::PI;
use std::path::PathBuf;

use crate::config::{ConfigError, ExperimentConfig, GridConfig, OperatorConfig, OperatorKind, Scenario, Scheme};

/// Solver settings with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverSettings {
    pub scheme: Scheme,
    pub tol: f64,
    pub max_iter: usize,
    pub epsilon: f64,
    pub theta: f64,
    pub cfl: f64,
    pub damping: f64,
}

/// A configuration with scenario defaults applied and hypotheses checked.
#[derive(Clone, Debug, Serialize)]
pub struct Experiment {
    pub scenario: Scenario,
    pub dimension: usize,
    pub sigma: f64,
    pub sigma0: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub upper: f64,
    pub grid: GridConfig,
    pub operator: OperatorConfig,
    pub rhs: ClosedForm,
    pub exterior: ClosedForm,
    pub solver: SolverSettings,
    pub diagnostics: DiagnosticsConfig,
    pub regions: Vec<f64>,
    pub output: PathBuf,
    pub seed: u64,
}

struct Preset {
    sigma: f64,
    sigma0: f64,
    lambda: f64,
    upper: f64,
    h: f64,
    operator: OperatorConfig,
    rhs: ClosedForm,
    exterior: ClosedForm,
    scheme: Scheme,
}

fn capped_cone() -> ClosedForm {
    ClosedForm::Cone {
        center: [0.3, 0.0],
        slope: 1.0,
        cap: Some(1.0),
    }
}

fn preset(s: Scenario) -> Preset {
    let base = Preset {
        sigma: 1.5,
        sigma0: 0.5,
        lambda: 1.0,
        upper: 2.0,
        h: 1.0 / 128.0,
        operator: OperatorConfig::of(OperatorKind::Fractional),
        rhs: ClosedForm::Zero,
        exterior: ClosedForm::Zero,
        scheme: Scheme::Direct,
    };
    match s {
        // translation invariant, f = 0, Lipschitz bounded g
        Scenario::Thm11 => Preset {
            operator: OperatorConfig::of(OperatorKind::IsaacsFourKernel),
            exterior: capped_cone(),
            scheme: Scheme::PolicyIteration,
            ..base
        },
        // σ₀ > 1, bounded discontinuous f, bounded g
        Scenario::Thm12 => Preset {
            sigma0: 1.1,
            operator: OperatorConfig::of(OperatorKind::IsaacsTwoKernel),
            rhs: ClosedForm::BallIndicator { radius: 0.25, value: -1.0 },
            exterior: ClosedForm::BallIndicator { radius: 1.5, value: 0.5 },
            scheme: Scheme::PolicyIteration,
            ..base
        },
        // x-dependent kernel, Hölder f and g
        Scenario::Schauder62 => Preset {
            sigma0: 1.1,
            operator: OperatorConfig {
                wave: Some([PI, 0.0]),
                amplitude: Some(0.5),
                ..OperatorConfig::of(OperatorKind::Ripple)
            },
            rhs: ClosedForm::HolderBump {
                center: [0.2, 0.0],
                exponent: 0.5,
                radius: 0.8,
                amplitude: -1.0,
            },
            exterior: capped_cone(),
            ..base
        },
        Scenario::Nonlinear72 => Preset {
            sigma0: 1.1,
            operator: OperatorConfig::of(OperatorKind::Softplus),
            rhs: ClosedForm::Bump {
                center: [0.0, 0.0],
                radius: 0.8,
                amplitude: -1.0,
            },
            scheme: Scheme::Newton,
            ..base
        },
        Scenario::ExactBall => Preset {
            h: 1.0 / 64.0,
            operator: OperatorConfig {
                c: Some(1.0),
                ..OperatorConfig::of(OperatorKind::Fractional)
            },
            rhs: ClosedForm::Constant { value: -1.0 },
            ..base
        },
        Scenario::Custom => Preset {
            h: 1.0 / 32.0,
            ..base
        },
    }
}

fn err(path: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::new(path, msg)
}

fn positive(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(err(path, format!("must be positive, got {v}")))
    }
}

/// Applies scenario defaults and checks the scenario's hypotheses.
pub fn resolve(c: &ExperimentConfig) -> Result<Experiment, ConfigError> {
    let p = preset(c.scenario);
    let preset_only = c.scenario != Scenario::Custom;
    if preset_only {
        if c.rhs.is_some() {
            return Err(err("rhs", format!("scenario {} fixes the right-hand side", c.scenario)));
        }
        if c.exterior.is_some() {
            return Err(err("exterior", format!("scenario {} fixes the exterior data", c.scenario)));
        }
        if c.scenario == Scenario::ExactBall && c.operator.is_some() {
            return Err(err("operator", "scenario exact-ball fixes the operator"));
        }
    }
    let dimension = c.dimension.unwrap_or(1);
    if dimension != 1 && dimension != 2 {
        return Err(err("dimension", format!("must be 1 or 2, got {dimension}")));
    }
    let sigma = c.sigma.unwrap_or(p.sigma);
    if !(sigma > 0.0 && sigma < 2.0) {
        return Err(err("sigma", format!("must lie in (0, 2), got {sigma}")));
    }
    let sigma0 = c.sigma0.unwrap_or(p.sigma0);
    if !(sigma0 > 0.0 && sigma0 <= sigma) {
        return Err(err("sigma0", format!("must lie in (0, sigma], got {sigma0}")));
    }
    if matches!(c.scenario, Scenario::Thm12 | Scenario::Schauder62 | Scenario::Nonlinear72) && sigma0 <= 1.0 {
        return Err(err("sigma0", format!("scenario {} needs sigma0 > 1, got {sigma0}", c.scenario)));
    }
    let lambda = positive("lambda", c.lambda.unwrap_or(p.lambda))?;
    let upper = positive("Lambda", c.upper.unwrap_or(p.upper))?;
    if lambda > upper {
        return Err(err("Lambda", format!("must be at least lambda = {lambda}, got {upper}")));
    }
    if c.scenario == Scenario::ExactBall && !(lambda <= 1.0 && 1.0 <= upper) {
        return Err(err("lambda", "exact-ball needs lambda <= 1 <= Lambda"));
    }
    let grid = c.grid.clone().unwrap_or(GridConfig { h: p.h, r_out: 4.0 });
    positive("grid.h", grid.h)?;
    if grid.h > 0.25 {
        return Err(err("grid.h", format!("must be at most 1/4, got {}", grid.h)));
    }
    if !(grid.r_out >= 2.0) {
        return Err(err("grid.r_out", format!("must be at least 2, got {}", grid.r_out)));
    }
    let operator = c.operator.clone().unwrap_or(p.operator);
    let rhs = c.rhs.clone().unwrap_or(p.rhs);
    let exterior = c.exterior.clone().unwrap_or(p.exterior);

    let s = &c.solver;
    let scheme = s.scheme.unwrap_or(if c.operator.is_some() { default_scheme(operator.kind) } else { p.scheme });
    let solver = SolverSettings {
        scheme,
        tol: positive("solver.tol", s.tol.unwrap_or(1e-10))?,
        max_iter: s.max_iter.unwrap_or(match scheme {
            Scheme::PseudoTime => 200_000,
            Scheme::FixedPoint => 500,
            _ => 100,
        }),
        epsilon: positive("solver.epsilon", s.epsilon.unwrap_or(0.1))?,
        theta: s.theta.unwrap_or(0.5),
        cfl: s.cfl.unwrap_or(0.9),
        damping: s.damping.unwrap_or(1.0),
    };
    if !(solver.theta > 0.0 && solver.theta <= 1.0) {
        return Err(err("solver.theta", format!("must lie in (0, 1], got {}", solver.theta)));
    }
    if !(solver.cfl > 0.0 && solver.cfl <= 1.0) {
        return Err(err("solver.cfl", format!("must lie in (0, 1], got {}", solver.cfl)));
    }
    if !(solver.damping > 0.0 && solver.damping <= 1.0) {
        return Err(err("solver.damping", format!("must lie in (0, 1], got {}", solver.damping)));
    }
    if solver.max_iter == 0 {
        return Err(err("solver.max_iter", "must be positive"));
    }

    let d = &c.diagnostics;
    let regions = d.regions.clone().unwrap_or_else(|| vec![0.5]);
    if regions.is_empty() {
        return Err(err("diagnostics.regions", "needs at least one radius"));
    }
    for (i, r) in regions.iter().enumerate() {
        if !(*r > 0.0 && *r < 1.0) {
            return Err(err(&format!("diagnostics.regions[{i}]"), format!("must lie in (0, 1), got {r}")));
        }
    }
    let diagnostics = DiagnosticsConfig {
        interior_radius: regions[0],
        scales: d.scales.unwrap_or(4),
        beta: d.beta.unwrap_or(1.0),
        alpha_prime: d.alpha_prime.unwrap_or(1.0),
        s_grid: d.s_grid.clone().unwrap_or_else(default_s_grid),
    };
    if diagnostics.scales < 2 {
        return Err(err("diagnostics.scales", "needs at least 2 scales"));
    }
    if !(diagnostics.beta > 0.0 && diagnostics.beta <= 1.0) {
        return Err(err("diagnostics.beta", "must lie in (0, 1]"));
    }

    let e = Experiment {
        scenario: c.scenario,
        dimension,
        sigma,
        sigma0,
        lambda,
        upper,
        grid,
        operator,
        rhs,
        exterior,
        solver,
        diagnostics,
        regions,
        output: c.output.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{}", c.scenario))),
        seed: c.seed,
    };
    let spec = e.operator_spec()?;
    check_hypotheses(&e, &spec)?;
    e.problem()?;
    Ok(e)
}

fn default_scheme(kind: OperatorKind) -> Scheme {
    match kind {
        OperatorKind::Fractional | OperatorKind::Checkerboard | OperatorKind::Ripple => Scheme::Direct,
        OperatorKind::Softplus | OperatorKind::RhoLinear => Scheme::Newton,
        _ => Scheme::PolicyIteration,
    }
}

fn check_hypotheses(e: &Experiment, spec: &OperatorSpec) -> Result<(), ConfigError> {
    let needs_invariance = matches!(e.scenario, Scenario::Thm11 | Scenario::Thm12);
    if needs_invariance && !spec.is_translation_invariant() {
        return Err(err("operator", format!("scenario {} needs a translation-invariant operator", e.scenario)));
    }
    let base = base_of(spec);
    if e.scenario == Scenario::Nonlinear72 && !matches!(base, OperatorSpec::Rho { .. }) {
        return Err(err("operator.kind", "scenario nonlinear-7-2 needs a rho operator (softplus or rho-linear)"));
    }
    let linear = matches!(base, OperatorSpec::Linear { .. });
    let rho = matches!(base, OperatorSpec::Rho { .. });
    match e.solver.scheme {
        Scheme::Direct if !linear => Err(err("solver.scheme", "direct needs a linear operator")),
        Scheme::Newton if !matches!(spec, OperatorSpec::Rho { .. }) => Err(err("solver.scheme", "newton needs an unmodified rho operator")),
        Scheme::FixedPoint | Scheme::Newton | Scheme::PseudoTime if e.sigma <= 1.0 => {
            Err(err("solver.scheme", format!("{:?} needs sigma > 1", e.solver.scheme)))
        }
        Scheme::PolicyIteration if rho => Err(err("solver.scheme", "policy iteration needs a linear, extremal or Isaacs operator")),
        _ => Ok(()),
    }
}

fn base_of(spec: &OperatorSpec) -> &OperatorSpec {
    match spec {
        OperatorSpec::Frozen { inner, .. } | OperatorSpec::Regularized { inner, .. } | OperatorSpec::Rescaled { inner, .. } => base_of(inner),
        s => s,
    }
}

fn required<T: Copy>(v: Option<T>, field: &str, kind: OperatorKind) -> Result<T, ConfigError> {
    v.ok_or_else(|| err(&format!("operator.{field}"), format!("required for kind {kind:?}")))
}

impl Experiment {
    pub fn constants(&self) -> Result<Constants, ConfigError> {
        Constants::new(self.dimension, self.sigma, self.sigma0, self.lambda, self.upper).map_err(|e| err("", e.to_string()))
    }

    pub fn operator_spec(&self) -> Result<OperatorSpec, ConfigError> {
        let c = self.constants()?;
        let o = &self.operator;
        let k = o.kind;
        let bad = |e: sigmalab::Error| err("operator", e.to_string());
        let unused: [(&str, bool); 6] = [
            ("c", o.c.is_some() && k != OperatorKind::Fractional),
            ("cell", o.cell.is_some() && k != OperatorKind::Checkerboard),
            ("wave", o.wave.is_some() && k != OperatorKind::Ripple),
            ("amplitude", o.amplitude.is_some() && k != OperatorKind::Ripple),
            ("p", o.p.is_some() && !matches!(k, OperatorKind::Softplus | OperatorKind::RhoLinear)),
            ("slope", o.slope.is_some() && k != OperatorKind::RhoLinear),
        ];
        if let Some((name, _)) = unused.iter().find(|(_, u)| *u) {
            return Err(err(&format!("operator.{name}"), format!("not a parameter of kind {k:?}")));
        }
        let spec = match k {
            OperatorKind::Fractional => {
                let a = o.c.unwrap_or(self.lambda);
                if !(self.lambda <= a && a <= self.upper) {
                    return Err(err("operator.c", format!("must lie in [lambda, Lambda], got {a}")));
                }
                OperatorSpec::fractional(c, a).map_err(bad)?
            }
            OperatorKind::ExtremalPlus => OperatorSpec::extremal(Sign::Plus, c).map_err(bad)?,
            OperatorKind::ExtremalMinus => OperatorSpec::extremal(Sign::Minus, c).map_err(bad)?,
            OperatorKind::IsaacsTwoKernel => OperatorSpec::isaacs_two_kernel(c).map_err(bad)?,
            OperatorKind::IsaacsFourKernel => OperatorSpec::isaacs_four_kernel(c).map_err(bad)?,
            OperatorKind::Checkerboard => {
                let cell = positive("operator.cell", required(o.cell, "cell", k)?)?;
                let kernel = sigmalab::kernels::KernelSpec::new(
                    self.dimension,
                    self.sigma,
                    self.sigma0,
                    c.ellipticity().map_err(bad)?,
                    Profile::Checkerboard {
                        cell,
                        low: self.lambda,
                        high: self.upper,
                    },
                )
                .map_err(bad)?;
                OperatorSpec::linear(kernel)
            }
            OperatorKind::Ripple => {
                let amp = required(o.amplitude, "amplitude", k)?;
                if !(0.0..=1.0).contains(&amp) {
                    return Err(err("operator.amplitude", format!("must lie in [0, 1], got {amp}")));
                }
                OperatorSpec::ripple(c, required(o.wave, "wave", k)?, amp).map_err(bad)?
            }
            OperatorKind::Softplus | OperatorKind::RhoLinear => {
                let profile = if k == OperatorKind::Softplus {
                    RhoProfile::Softplus
                } else {
                    let slope = required(o.slope, "slope", k)?;
                    if !(self.lambda <= slope && slope <= self.upper) {
                        return Err(err("operator.slope", format!("must lie in [lambda, Lambda], got {slope}")));
                    }
                    RhoProfile::Linear { slope }
                };
                let rho = RhoSpec::new(profile, o.p.unwrap_or(0.0), self.lambda, self.upper).map_err(|e| err("operator.p", e.to_string()))?;
                OperatorSpec::rho(c, rho).map_err(bad)?
            }
        };
        let spec = match o.frozen_at {
            Some(x0) => spec.freeze(x0),
            None => spec,
        };
        match o.regularize {
            Some(eps) => spec.regularize(positive("operator.regularize", eps)?).map_err(|e| err("operator.regularize", e.to_string())),
            None => Ok(spec),
        }
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.dimension, self.grid.h, self.grid.r_out).map_err(|e| err("grid", e.to_string()))
    }

    pub fn problem(&self) -> Result<BVPProblem, ConfigError> {
        self.problem_on(self.grid()?)
    }

    /// The same problem on another lattice.
    pub fn problem_on(&self, grid: Grid) -> Result<BVPProblem, ConfigError> {
        let ext = ExteriorData::new(self.exterior.clone()).map_err(|e| err("exterior", e.to_string()))?;
        BVPProblem::new(self.operator_spec()?, grid, &self.rhs, ext).map_err(|e| err("grid", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse;

    #[test]
    fn every_preset_resolves() {
        for s in Scenario::ALL {
            let e = resolve(&ExperimentConfig::preset(s)).unwrap();
            assert_eq!(e.scenario, s);
        }
    }

    #[test]
    fn lambda_above_upper_names_the_field() {
        let e = resolve(&parse("scenario = \"custom\"\nlambda = 3.0\nLambda = 2.0\n").unwrap()).unwrap_err();
        assert_eq!(e.path, "Lambda");
    }

    #[test]
    fn presets_reject_overrides() {
        let e = resolve(&parse("scenario = \"thm-1-1\"\n[rhs]\nform = \"zero\"\n").unwrap()).unwrap_err();
        assert_eq!(e.path, "rhs");
        let e = resolve(&parse("scenario = \"exact-ball\"\n[operator]\nkind = \"fractional\"\n").unwrap()).unwrap_err();
        assert_eq!(e.path, "operator");
    }

    #[test]
    fn hypotheses_are_enforced() {
        let e = resolve(&parse("scenario = \"thm-1-2\"\nsigma0 = 0.9\n").unwrap()).unwrap_err();
        assert_eq!(e.path, "sigma0");
        let text = "scenario = \"thm-1-1\"\n[operator]\nkind = \"ripple\"\nwave = [1.0, 0.0]\namplitude = 0.5\n";
        assert_eq!(resolve(&parse(text).unwrap()).unwrap_err().path, "operator");
        let text = "scenario = \"custom\"\n[operator]\nkind = \"isaacs-two-kernel\"\n[solver]\nscheme = \"direct\"\n";
        assert_eq!(resolve(&parse(text).unwrap()).unwrap_err().path, "solver.scheme");
    }

    #[test]
    fn operator_parameters_are_checked() {
        let text = "scenario = \"custom\"\n[operator]\nkind = \"ripple\"\namplitude = 0.5\n";
        assert_eq!(resolve(&parse(text).unwrap()).unwrap_err().path, "operator.wave");
        let text = "scenario = \"custom\"\n[operator]\nkind = \"extremal-plus\"\nslope = 1.0\n";
        assert_eq!(resolve(&parse(text).unwrap()).unwrap_err().path, "operator.slope");
    }
}
