//! Single runs: solve, diagnose, write artifacts.

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use sigmalab::diagnostics::{dyadic_scales, holder_fit, regularity_report, residual, RegularityReport};
use sigmalab::fields::{Ball, Field, Grid};
use sigmalab::operators::ball_profile_image;
use sigmalab::solvers::{
    pseudo_time_march, solve_fixed_point, solve_linear_dirichlet, solve_newton_rho, solve_policy_iteration, BVPProblem, SolveReport,
};
use std::path::{Path, PathBuf};

use crate::config::{Scenario, Scheme};
use crate::scenario::Experiment;
use crate::{CliError, OUTPUT_ROOT_ENV};

pub const SOLVE_REPORT: &str = "solve_report.json";
pub const SOLUTION: &str = "solution.json";
pub const REGULARITY_REPORT: &str = "regularity_report.json";
pub const SCALES: &str = "scales.csv";
pub const CONVERGENCE: &str = "convergence.csv";
pub const MANIFEST: &str = "manifest.json";

/// Hex sha256 of the resolved experiment in canonical JSON.
pub fn config_hash(e: &Experiment) -> String {
    let text = serde_json::to_string(e).expect("experiment serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Resolves a relative output path against `SIGMALAB_OUTPUT_ROOT`.
pub fn output_dir(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Runs the configured scheme.
pub fn solve(e: &Experiment, p: &BVPProblem) -> sigmalab::Result<SolveReport> {
    let s = &e.solver;
    match s.scheme {
        Scheme::Direct => solve_linear_dirichlet(p),
        Scheme::PolicyIteration => solve_policy_iteration(p, s.tol, s.max_iter),
        Scheme::FixedPoint => solve_fixed_point(p, s.epsilon, s.theta, s.tol, s.max_iter),
        Scheme::Newton => solve_newton_rho(p, s.tol, s.max_iter, s.damping),
        Scheme::PseudoTime => pseudo_time_march(p, s.cfl, s.tol, s.max_iter),
    }
}

/// Interior Hölder fits on one region.
#[derive(Clone, Debug, Serialize)]
pub struct RegionFit {
    pub radius: f64,
    pub alpha0: f64,
    pub alpha0_r_squared: f64,
    pub alpha1: f64,
    pub alpha1_r_squared: f64,
}

pub fn region_fit(u: &Field, radius: f64, scales: usize) -> sigmalab::Result<RegionFit> {
    let region = Ball::new([0.0, 0.0], radius);
    let s = dyadic_scales(&u.grid, 0.5 * (1.0 - radius), scales);
    let first = holder_fit(u, &region, 0, &s)?;
    let second = holder_fit(u, &region, 1, &s)?;
    Ok(RegionFit {
        radius,
        alpha0: first.exponent,
        alpha0_r_squared: first.r_squared,
        alpha1: second.exponent - 1.0,
        alpha1_r_squared: second.r_squared,
    })
}

/// Closed-form error of the exact-ball problem at one lattice spacing.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub linf_error: f64,
    /// Error relative to the peak of the closed-form solution.
    pub relative_error: f64,
    /// Previous row's error over this one.
    pub ratio: Option<f64>,
}

/// `(1-|x|²)₊^{σ/2} / |K|`, the solution with `a ≡ 1`, `f ≡ -1`, `g ≡ 0`.
pub fn exact_ball_solution(dim: usize, sigma: f64) -> impl Fn([f64; 2]) -> f64 {
    let k = ball_profile_image(dim, sigma).abs();
    move |x| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        if r2 >= 1.0 {
            0.0
        } else {
            (1.0 - r2).powf(0.5 * sigma) / k
        }
    }
}

/// Sup-norm distance between a solution and the exact-ball closed form.
pub fn exact_ball_error(u: &Field, sigma: f64) -> f64 {
    let exact = exact_ball_solution(u.grid.dim, sigma);
    u.grid
        .interior_nodes()
        .iter()
        .map(|&i| (u.values[i] - exact(u.grid.node_point(i))).abs())
        .fold(0.0, f64::max)
}

/// Lattice spacings of the exact-ball convergence table.
pub fn convergence_spacings(dim: usize) -> [f64; 3] {
    if dim == 1 {
        [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]
    } else {
        [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0]
    }
}

pub fn exact_ball_convergence(e: &Experiment) -> Result<Vec<ConvergenceRow>, CliError> {
    let peak = exact_ball_solution(e.dimension, e.sigma)([0.0, 0.0]);
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for h in convergence_spacings(e.dimension) {
        let grid = Grid::new(e.dimension, h, e.grid.r_out)?;
        let r = solve(e, &e.problem_on(grid)?)?;
        let err = exact_ball_error(r.field(), e.sigma);
        let ratio = rows.last().map(|p| p.linf_error / err);
        rows.push(ConvergenceRow {
            h,
            linf_error: err,
            relative_error: err / peak,
            ratio,
        });
    }
    Ok(rows)
}

/// Everything a run produced.
pub struct RunOutcome {
    pub experiment: Experiment,
    pub config_hash: String,
    pub report: SolveReport,
    pub regularity: RegularityReport,
    pub regions: Vec<RegionFit>,
    pub convergence: Vec<ConvergenceRow>,
    pub dir: PathBuf,
}

impl RunOutcome {
    pub fn solution(&self) -> &Field {
        self.report.field()
    }
}

/// Solves and diagnoses without touching the file system.
pub fn execute(e: &Experiment) -> Result<(SolveReport, RegularityReport, Vec<RegionFit>), CliError> {
    let p = e.problem()?;
    let mut report = solve(e, &p)?;
    // the reported residual is the diagnostics residual
    let res = residual(&p.operator, report.field(), &p.rhs)?;
    if let Some(last) = report.residuals.last_mut() {
        *last = res.sup;
    }
    report.field_ref = Some(SOLUTION.to_string());
    let reg = regularity_report(report.field(), e.sigma0, &e.diagnostics)?;
    let regions = e
        .regions
        .iter()
        .skip(1)
        .map(|&r| region_fit(report.field(), r, e.diagnostics.scales))
        .collect::<sigmalab::Result<Vec<_>>>()?;
    Ok((report, reg, regions))
}

fn write(dir: &Path, name: &str, bytes: &[u8], hashes: &mut Vec<Value>) -> Result<(), CliError> {
    std::fs::write(dir.join(name), bytes)?;
    hashes.push(json!({ "name": name, "sha256": hex::encode(Sha256::digest(bytes)) }));
    Ok(())
}

fn with_hash(mut v: Value, hash: &str) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("config_hash".into(), Value::String(hash.to_string()));
    }
    v
}

/// Runs an experiment and writes its artifacts into `dir`. A run that does
/// not converge still writes everything and then returns
/// [`CliError::NonConvergence`].
pub fn run(e: &Experiment, dir: &Path) -> Result<RunOutcome, CliError> {
    let hash = config_hash(e);
    let (report, regularity, regions) = execute(e)?;
    let convergence = if e.scenario == Scenario::ExactBall {
        exact_ball_convergence(e)?
    } else {
        Vec::new()
    };
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    write(dir, SOLUTION, report.field().to_json()?.as_bytes(), &mut files)?;
    let solve_json = with_hash(serde_json::to_value(&report)?, &hash);
    std::fs::write(dir.join(SOLVE_REPORT), serde_json::to_string_pretty(&solve_json)?)?;
    // wall time is the one nondeterministic value; the manifest hashes the rest
    let mut payload = solve_json.clone();
    payload["wall_ms"] = Value::Null;
    let bytes = serde_json::to_string_pretty(&payload)?;
    files.push(json!({ "name": SOLVE_REPORT, "sha256": hex::encode(Sha256::digest(bytes.as_bytes())), "excludes": ["wall_ms"] }));
    let mut reg_json = with_hash(serde_json::to_value(&regularity)?, &hash);
    reg_json["extra_regions"] = serde_json::to_value(&regions)?;
    write(dir, REGULARITY_REPORT, serde_json::to_string_pretty(&reg_json)?.as_bytes(), &mut files)?;
    let mut scales = Vec::new();
    regularity.write_scales_csv(&mut scales)?;
    write(dir, SCALES, &scales, &mut files)?;
    if !convergence.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &convergence {
            w.serialize(r).map_err(|e| CliError::Io(e.into()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        write(dir, CONVERGENCE, &bytes, &mut files)?;
    }
    let manifest = json!({
        "config_hash": hash,
        "scenario": e.scenario.name(),
        "seed": e.seed,
        "generator": sigmalab::probes::GENERATOR,
        "versions": {
            "sigmalab": sigmalab::VERSION,
            "sigmalab-cli": env!("CARGO_PKG_VERSION"),
        },
        "converged": report.converged,
        "config": e,
        "artifacts": files,
    });
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    let outcome = RunOutcome {
        experiment: e.clone(),
        config_hash: hash,
        report,
        regularity,
        regions,
        convergence,
        dir: dir.to_path_buf(),
    };
    if !outcome.report.converged {
        return Err(CliError::NonConvergence {
            scheme: outcome.report.scheme.clone(),
            residual: outcome.report.final_residual(),
        });
    }
    Ok(outcome)
}
