//! Experiment configuration files (TOML).

use serde::{Deserialize, Serialize};
use sigmalab::fields::ClosedForm;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[serde(rename = "thm-1-1")]
    Thm11,
    #[serde(rename = "thm-1-2")]
    Thm12,
    #[serde(rename = "schauder-6-2")]
    Schauder62,
    #[serde(rename = "nonlinear-7-2")]
    Nonlinear72,
    ExactBall,
    Custom,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Thm11,
        Scenario::Thm12,
        Scenario::Schauder62,
        Scenario::Nonlinear72,
        Scenario::ExactBall,
        Scenario::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Thm11 => "thm-1-1",
            Scenario::Thm12 => "thm-1-2",
            Scenario::Schauder62 => "schauder-6-2",
            Scenario::Nonlinear72 => "nonlinear-7-2",
            Scenario::ExactBall => "exact-ball",
            Scenario::Custom => "custom",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: f64,
    #[serde(default = "default_r_out")]
    pub r_out: f64,
}

fn default_r_out() -> f64 {
    4.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    /// `c` times the fractional Laplacian kernel; `c` defaults to `λ`.
    Fractional,
    ExtremalPlus,
    ExtremalMinus,
    IsaacsTwoKernel,
    IsaacsFourKernel,
    /// `a(y)` alternating between `λ` and `Λ` on cells of width `cell`.
    Checkerboard,
    /// `λ + (Λ-λ)(1 + η sin(k·x) cos|y|)/2`.
    Ripple,
    Softplus,
    RhoLinear,
}

/// Operator block. Parameters not used by `kind` must be left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub kind: OperatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Homogeneity exponent of `ρ(z, y) = |y|^p ρ̄(z|y|^{-p})`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_at: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularize: Option<f64>,
}

impl OperatorConfig {
    pub fn of(kind: OperatorKind) -> Self {
        Self {
            kind,
            c: None,
            cell: None,
            wave: None,
            amplitude: None,
            p: None,
            slope: None,
            frozen_at: None,
            regularize: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Direct,
    PolicyIteration,
    FixedPoint,
    Newton,
    PseudoTime,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<usize>,
    /// Radii of the interior fit regions `B_r`; the first drives the report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_grid: Option<Vec<f64>>,
}

/// A configuration file as written. Omitted values take scenario defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, rename = "Lambda", skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhs: Option<ClosedForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exterior: Option<ClosedForm>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn preset(scenario: Scenario) -> Self {
        Self {
            scenario,
            dimension: None,
            sigma: None,
            sigma0: None,
            lambda: None,
            upper: None,
            grid: None,
            operator: None,
            rhs: None,
            exterior: None,
            solver: SolverConfig::default(),
            diagnostics: DiagnosticsBlock::default(),
            output: None,
            seed: 0,
        }
    }
}

/// Invalid configuration; `path` names the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "invalid config: {}", self.message)
        } else {
            write!(f, "invalid config at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::new(path, inner.message().trim().to_string())
    })
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_preset_parses() {
        let c = parse("scenario = \"thm-1-1\"\n").unwrap();
        assert_eq!(c.scenario, Scenario::Thm11);
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let e = parse("scenario = \"custom\"\n[solver]\nschem = \"direct\"\n").unwrap_err();
        assert_eq!(e.path, "solver.schem");
        assert!(e.message.contains("schem"), "{e}");
        let e = parse("scenario = \"custom\"\n[grid]\nh = \"x\"\n").unwrap_err();
        assert_eq!(e.path, "grid.h");
    }

    #[test]
    fn closed_forms_and_operators_parse() {
        let text = r#"
scenario = "custom"
sigma = 1.4
Lambda = 3.0
[grid]
h = 0.03125
[operator]
kind = "ripple"
wave = [3.0, 0.0]
amplitude = 0.5
[rhs]
form = "constant"
value = -1.0
[exterior]
form = "cone"
center = [0.0, 0.0]
slope = 1.0
cap = 2.0
"#;
        let c = parse(text).unwrap();
        assert_eq!(c.upper, Some(3.0));
        assert_eq!(c.operator.unwrap().kind, OperatorKind::Ripple);
        assert!(matches!(c.exterior, Some(ClosedForm::Cone { .. })));
    }

    #[test]
    fn round_trip_through_toml() {
        let mut c = ExperimentConfig::preset(Scenario::ExactBall);
        c.sigma = Some(1.2);
        c.grid = Some(GridConfig { h: 1.0 / 32.0, r_out: 4.0 });
        let text = toml::to_string(&c).unwrap();
        assert_eq!(parse(&text).unwrap(), c);
    }
}
