mod common;

use sigmalab::diagnostics::residual;
use sigmalab::fields::{ClosedForm, ExteriorData, Field, Grid};
use sigmalab::operators::{Constants, OperatorSpec, RhoSpec};
use sigmalab::solvers::*;

fn consts(sigma: f64) -> Constants {
    Constants::new(1, sigma, 0.5, 1.0, 2.0).unwrap()
}

fn constant(v: f64) -> ClosedForm {
    ClosedForm::Constant { value: v }
}

fn problem(op: OperatorSpec, h: f64, f: f64, g: f64) -> BVPProblem {
    let grid = Grid::new(1, h, 4.0).unwrap();
    let ext = if g == 0.0 {
        ExteriorData::zero()
    } else {
        ExteriorData::new(constant(g)).unwrap()
    };
    BVPProblem::new(op, grid, &constant(f), ext).unwrap()
}

fn sup_diff(a: &Field, b: &Field) -> f64 {
    let nodes = a.grid.interior_nodes();
    nodes.iter().map(|&i| (a.values[i] - b.values[i]).abs()).fold(0.0, f64::max)
}

fn min_diff(a: &Field, b: &Field) -> f64 {
    let nodes = a.grid.interior_nodes();
    nodes.iter().map(|&i| a.values[i] - b.values[i]).fold(f64::INFINITY, f64::min)
}

#[test]
fn ball_solution_converges_to_closed_form() {
    // the profile (1-x²)^{σ/2} has constant image on B₁
    let s = 1.5;
    let k = common::ball_profile_exact(s).abs();
    let errs: Vec<f64> = [32.0, 64.0, 128.0]
        .iter()
        .map(|n| {
            let p = problem(OperatorSpec::fractional(consts(s), 1.0).unwrap(), 1.0 / n, -1.0, 0.0);
            let r = solve_linear_dirichlet(&p).unwrap();
            let u = r.field();
            let nodes = u.grid.interior_nodes();
            let mut e: f64 = 0.0;
            for &i in &nodes {
                let x = u.grid.node_point(i)[0];
                e = e.max((u.values[i] - (1.0 - x * x).powf(s / 2.0) / k).abs());
            }
            e * k
        })
        .collect();
    assert!(errs[1] < 0.05, "{errs:?}");
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn direct_solve_residual_contract() {
    let p = problem(OperatorSpec::ripple(consts(1.5), [std::f64::consts::PI, 0.0], 0.5).unwrap(), 1.0 / 64.0, -1.0, 0.0);
    let r = solve_linear_dirichlet(&p).unwrap();
    assert!(r.converged);
    assert!(r.final_residual() <= 1e-10 * 2.0);
    let res = residual(&p.operator, r.field(), &p.rhs).unwrap();
    assert_eq!(res.sup, r.final_residual());
}

#[test]
fn all_schemes_agree_on_a_linear_problem() {
    let p = problem(OperatorSpec::fractional(consts(1.5), 1.0).unwrap(), 1.0 / 32.0, -1.0, 0.0);
    let direct = solve_linear_dirichlet(&p).unwrap();
    let howard = solve_policy_iteration(&p, 1e-10, 50).unwrap();
    let march = pseudo_time_march(&p, 0.9, 1e-9, 200_000).unwrap();
    let fixed = solve_fixed_point(&p, 0.1, 1.0, 1e-12, 50).unwrap();
    assert!(howard.converged && march.converged && fixed.converged);
    assert_eq!(howard.iterations, 1);
    assert!(sup_diff(direct.field(), howard.field()) < 1e-9);
    assert!(sup_diff(direct.field(), march.field()) < 1e-6);
    assert!(sup_diff(direct.field(), fixed.field()) < 1e-9);
}

#[test]
fn isaacs_policy_iteration_matches_pseudo_time() {
    let c = consts(1.5);
    for op in [OperatorSpec::isaacs_two_kernel(c).unwrap(), OperatorSpec::isaacs_four_kernel(c).unwrap()] {
        let p = problem(op, 1.0 / 32.0, -1.0, 0.0);
        let a = solve_policy_iteration(&p, 1e-10, 100).unwrap();
        let b = pseudo_time_march(&p, 0.9, 1e-9, 200_000).unwrap();
        assert!(a.converged && b.converged);
        assert!(a.final_residual() <= 1e-8);
        assert!(sup_diff(a.field(), b.field()) < 1e-4);
    }
}

#[test]
fn policy_iteration_is_monotone_in_exterior_data() {
    let op = OperatorSpec::isaacs_four_kernel(consts(1.5)).unwrap();
    let lo = solve_policy_iteration(&problem(op.clone(), 1.0 / 32.0, -1.0, 0.0), 1e-10, 100).unwrap();
    let hi = solve_policy_iteration(&problem(op, 1.0 / 32.0, -1.0, 0.1), 1e-10, 100).unwrap();
    assert!(min_diff(hi.field(), lo.field()) >= -1e-10);
}

#[test]
fn comparison_for_every_solver() {
    // f₁ ≤ f₂ and g₁ ≥ g₂ give u₁ ≥ u₂
    let c = consts(1.5);
    let h = 1.0 / 32.0;
    type Solver = fn(&BVPProblem) -> SolveReport;
    let cases: Vec<(OperatorSpec, Solver)> = vec![
        (OperatorSpec::fractional(c, 1.0).unwrap(), |p| solve_linear_dirichlet(p).unwrap()),
        (OperatorSpec::isaacs_four_kernel(c).unwrap(), |p| solve_policy_iteration(p, 1e-10, 100).unwrap()),
        (OperatorSpec::rho(c, RhoSpec::softplus(1.0, 2.0).unwrap()).unwrap(), |p| solve_newton_rho(p, 1e-10, 50, 1.0).unwrap()),
        (OperatorSpec::isaacs_two_kernel(c).unwrap(), |p| pseudo_time_march(p, 0.9, 1e-10, 200_000).unwrap()),
    ];
    for (op, solve) in cases {
        for (f1, f2, g1, g2) in [(-1.0, -0.5, 0.0, 0.0), (-1.0, -1.0, 0.2, 0.1), (-2.0, 0.5, 0.3, -0.3)] {
            let u1 = solve(&problem(op.clone(), h, f1, g1));
            let u2 = solve(&problem(op.clone(), h, f2, g2));
            assert!(min_diff(u1.field(), u2.field()) >= -1e-8, "{op:?}");
        }
    }
}

#[test]
fn newton_softplus_is_sandwiched_and_matches_pseudo_time() {
    let c = consts(1.5);
    let h = 1.0 / 32.0;
    let p = problem(OperatorSpec::rho(c, RhoSpec::softplus(1.0, 2.0).unwrap()).unwrap(), h, -1.0, 0.0);
    let n = solve_newton_rho(&p, 1e-10, 50, 1.0).unwrap();
    assert!(n.converged && n.final_residual() <= 1e-8, "{:?}", n.residuals);
    let low = solve_linear_dirichlet(&problem(OperatorSpec::fractional(c, c.upper).unwrap(), h, -1.0, 0.0)).unwrap();
    let high = solve_linear_dirichlet(&problem(OperatorSpec::fractional(c, c.lambda).unwrap(), h, -1.0, 0.0)).unwrap();
    assert!(min_diff(n.field(), low.field()) >= -1e-8);
    assert!(min_diff(high.field(), n.field()) >= -1e-8);
    let m = pseudo_time_march(&p, 0.9, 1e-9, 200_000).unwrap();
    assert!(sup_diff(n.field(), m.field()) < 1e-4);
}

#[test]
fn newton_on_linear_rho_is_one_step() {
    let c = consts(1.5);
    let p = problem(OperatorSpec::rho(c, RhoSpec::linear(1.5, 1.0, 2.0).unwrap()).unwrap(), 1.0 / 32.0, -1.0, 0.0);
    let n = solve_newton_rho(&p, 1e-10, 10, 1.0).unwrap();
    assert_eq!(n.iterations, 1);
    let d = solve_linear_dirichlet(&problem(OperatorSpec::fractional(c, 1.5).unwrap(), 1.0 / 32.0, -1.0, 0.0)).unwrap();
    assert!(sup_diff(n.field(), d.field()) < 1e-8);
}

#[test]
fn pseudo_time_preserves_order_along_the_flow() {
    let p = problem(OperatorSpec::isaacs_four_kernel(consts(1.5)).unwrap(), 1.0 / 32.0, -1.0, 0.0);
    let zero = p.initial_field().unwrap();
    let mut values = zero.values.clone();
    for i in zero.grid.interior_nodes() {
        values[i] = 0.5;
    }
    let top = Field::from_parts(zero.grid, values, ExteriorData::zero()).unwrap();
    let mut lower = Vec::new();
    pseudo_time_march_from(&p, zero, 0.9, 1e-12, 300, |_, u| lower.push(u.clone())).unwrap();
    let mut step = 0;
    pseudo_time_march_from(&p, top, 0.9, 1e-12, 300, |k, u| {
        assert!(min_diff(u, &lower[k - 1]) >= -1e-12, "step {k}");
        step += 1;
    })
    .unwrap();
    assert!(step > 100);
}

#[test]
fn zero_data_gives_zero_for_every_scheme() {
    let p = problem(OperatorSpec::isaacs_two_kernel(consts(1.5)).unwrap(), 1.0 / 32.0, 0.0, 0.0);
    for r in [
        solve_policy_iteration(&p, 1e-12, 10).unwrap(),
        pseudo_time_march(&p, 0.9, 1e-12, 10).unwrap(),
        solve_fixed_point(&p, 0.1, 0.5, 1e-12, 10).unwrap(),
    ] {
        assert!(r.field().values.iter().all(|v| *v == 0.0), "{}", r.scheme);
    }
}

#[test]
fn fixed_point_bias_shrinks_with_eps() {
    let c = Constants::new(1, 1.5, 0.5, 0.9, 1.0).unwrap();
    let p = problem(OperatorSpec::isaacs_four_kernel(c).unwrap(), 1.0 / 32.0, -1.0, 0.0);
    let exact = solve_policy_iteration(&p, 1e-12, 100).unwrap();
    let gaps: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&e| {
            let r = solve_fixed_point(&p, e, 0.5, 1e-10, 500).unwrap();
            assert!(r.converged);
            assert!(r.f_lipschitz.unwrap().is_finite());
            sup_diff(r.field(), exact.field())
        })
        .collect();
    assert!(gaps[0] >= gaps[1] && gaps[1] >= gaps[2], "{gaps:?}");
}

#[test]
fn solvers_reject_small_sigma_where_required() {
    let p = problem(OperatorSpec::fractional(consts(0.8), 1.0).unwrap(), 1.0 / 16.0, -1.0, 0.0);
    assert!(solve_fixed_point(&p, 0.1, 1.0, 1e-8, 10).is_err());
    assert!(solve_linear_dirichlet(&p).is_ok());
}

#[test]
fn report_json_lists_the_residual_history() {
    let p = problem(OperatorSpec::isaacs_two_kernel(consts(1.5)).unwrap(), 1.0 / 16.0, -1.0, 0.0);
    let r = solve_policy_iteration(&p, 1e-10, 50).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    for key in ["scheme", "iterations", "residuals", "wall_ms", "converged", "field_ref"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["residuals"].as_array().unwrap().len(), r.residuals.len());
}
