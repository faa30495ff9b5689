//! Parameter sweeps over one configuration axis.

use serde::Serialize;
use sigmalab::solvers::solve_policy_iteration;
use std::path::Path;

use crate::config::{ExperimentConfig, GridConfig, Scenario, Scheme};
use crate::run::{exact_ball_error, exact_ball_solution, run, RunOutcome};
use crate::scenario::resolve;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Sigma,
    H,
    Epsilon,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Sigma => "sigma",
            Axis::H => "h",
            Axis::Epsilon => "epsilon",
        }
    }

    fn apply(self, c: &mut ExperimentConfig, v: f64) {
        match self {
            Axis::Sigma => c.sigma = Some(v),
            Axis::H => {
                let r_out = c.grid.as_ref().map_or(4.0, |g| g.r_out);
                c.grid = Some(GridConfig { h: v, r_out });
            }
            Axis::Epsilon => c.solver.epsilon = Some(v),
        }
    }
}

/// One row of the aggregated table. Missing measurements are empty cells.
#[derive(Clone, Debug, Default, Serialize)]
pub struct SweepRow {
    pub value: f64,
    /// `ok`, `nonconverged`, `config-error` or `error`.
    pub status: String,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub alpha0: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha1_r_squared: Option<f64>,
    pub boundary_s: Option<f64>,
    pub boundary_s_fit: Option<f64>,
    pub boundary_constant: Option<f64>,
    pub boundary_r_squared: Option<f64>,
    pub sup_norm: Option<f64>,
    pub interior_constant: Option<f64>,
    /// Exact-ball only: sup error relative to the closed-form peak.
    pub ball_error: Option<f64>,
    /// Epsilon axis only: sup distance to the policy-iteration solution.
    pub gap: Option<f64>,
    pub message: String,
}

fn fill(row: &mut SweepRow, o: &RunOutcome) {
    let u = o.solution();
    let r = &o.regularity;
    row.iterations = Some(o.report.iterations);
    row.residual = o.report.residuals.last().copied();
    row.alpha0 = Some(r.alpha0);
    row.alpha1 = Some(r.alpha1);
    row.alpha1_r_squared = Some(r.second.r_squared);
    if let Some(b) = &r.boundary {
        row.boundary_s = Some(b.increments.s);
        row.boundary_s_fit = Some(b.increments.s_fit);
        row.boundary_constant = Some(b.increments.constant);
        row.boundary_r_squared = Some(b.increments.r_squared);
    }
    row.sup_norm = Some(u.sup_norm_on(&u.grid.interior_nodes()));
    row.interior_constant = Some(r.interior.constant);
    if o.experiment.scenario == Scenario::ExactBall {
        let e = &o.experiment;
        row.ball_error = Some(exact_ball_error(u, e.sigma) / exact_ball_solution(e.dimension, e.sigma)([0.0, 0.0]));
    }
}

fn gap_to_policy_iteration(o: &RunOutcome) -> Result<f64, CliError> {
    let e = &o.experiment;
    let reference = solve_policy_iteration(&e.problem()?, 1e-12, 200)?;
    let u = o.solution();
    Ok(u.grid
        .interior_nodes()
        .iter()
        .map(|&i| (u.values[i] - reference.field().values[i]).abs())
        .fold(0.0, f64::max))
}

/// Runs one experiment per value into `<dir>/<axis>-<index>`, continuing past
/// failures, and writes `<dir>/sweep_<axis>.csv`.
pub fn sweep(base: &ExperimentConfig, axis: Axis, values: &[f64], dir: &Path) -> Result<Vec<SweepRow>, CliError> {
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        let mut c = base.clone();
        axis.apply(&mut c, v);
        let mut row = SweepRow {
            value: v,
            ..SweepRow::default()
        };
        let sub = dir.join(format!("{}-{i:02}", axis.name()));
        match resolve(&c).map_err(CliError::from).and_then(|e| run(&e, &sub)) {
            Ok(o) => {
                fill(&mut row, &o);
                row.status = "ok".into();
                if axis == Axis::Epsilon && o.experiment.solver.scheme == Scheme::FixedPoint {
                    match gap_to_policy_iteration(&o) {
                        Ok(g) => row.gap = Some(g),
                        Err(e) => row.message = format!("no reference: {e}"),
                    }
                }
            }
            Err(CliError::NonConvergence { scheme, residual }) => {
                row.status = "nonconverged".into();
                row.residual = Some(residual);
                row.message = format!("{scheme} did not converge");
            }
            Err(e @ CliError::Config(_)) => {
                row.status = "config-error".into();
                row.message = e.to_string();
            }
            Err(e) => {
                row.status = "error".into();
                row.message = e.to_string();
            }
        }
        rows.push(row);
    }
    let mut w = csv::Writer::from_path(dir.join(format!("sweep_{}.csv", axis.name()))).map_err(|e| CliError::Io(e.into()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(rows)
}
