//! Discrete Dirichlet problems `I(u) = f` in `B₁`, `u = g` outside.
//!
//! All schemes work on the interior lattice nodes `|x| < 1`. Lattice nodes
//! outside the ball keep the exterior values, and the operator's stencil reads
//! the exterior closed form beyond the lattice box.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::residual;
use crate::error::{Error, Result};
use crate::fields::{ClosedForm, ExteriorData, Field, Grid};
use crate::operators::{Constants, Operator, OperatorSpec, TapTarget, Want};

/// Largest number of unknowns handled by the dense solvers.
pub const MAX_UNKNOWNS: usize = 10_000;

#[derive(Clone, Debug)]
pub struct BVPProblem {
    pub operator: OperatorSpec,
    pub grid: Grid,
    /// Right-hand side, read at interior nodes only.
    pub rhs: Field,
    pub exterior: ExteriorData,
}

impl BVPProblem {
    pub fn new(operator: OperatorSpec, grid: Grid, rhs: &ClosedForm, exterior: ExteriorData) -> Result<Self> {
        operator.validate()?;
        let c = operator.constants();
        if c.dim != grid.dim {
            return Err(Error::usage("operator and grid dimensions differ"));
        }
        let rhs = Field::sample(grid, rhs, ExteriorData::zero())?;
        Ok(Self {
            operator,
            grid,
            rhs,
            exterior,
        })
    }

    pub fn constants(&self) -> Constants {
        self.operator.constants()
    }

    /// Same problem with another operator.
    pub fn with_operator(&self, operator: OperatorSpec) -> Result<Self> {
        operator.validate()?;
        Ok(Self {
            operator,
            ..self.clone()
        })
    }

    /// Exterior data sampled on the lattice; interior values are the initial guess.
    pub fn initial_field(&self) -> Result<Field> {
        Field::from_exterior(self.grid, self.exterior.clone())
    }

    fn require_sigma_above_one(&self, scheme: &str) -> Result<()> {
        let s = self.constants().sigma;
        if s <= 1.0 {
            return Err(Error::usage(format!("{scheme} requires σ > 1, got {s}")));
        }
        Ok(())
    }
}

/// Outcome of a solver run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub solution: Option<Field>,
    pub scheme: String,
    pub iterations: usize,
    /// Sup-norm residuals of the problem's operator, one per iterate.
    pub residuals: Vec<f64>,
    pub wall_ms: f64,
    pub converged: bool,
    pub field_ref: Option<String>,
    /// Measured Lipschitz constant of `F` along the iterates (fixed point only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f_lipschitz: Option<f64>,
    /// Sup-norm update sizes (fixed point only).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub steps: Vec<f64>,
}

impl SolveReport {
    fn new(scheme: &str) -> Self {
        Self {
            solution: None,
            scheme: scheme.to_string(),
            iterations: 0,
            residuals: Vec::new(),
            wall_ms: 0.0,
            converged: false,
            field_ref: None,
            f_lipschitz: None,
            steps: Vec::new(),
        }
    }

    pub fn field(&self) -> &Field {
        self.solution.as_ref().expect("report carries its solution")
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("residual history is nonempty")
    }

    fn finish(mut self, u: Field, start: Instant) -> Self {
        self.solution = Some(u);
        self.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// ---------------------------------------------------------------------------
// Dense assembly

/// Interior unknowns of a grid and their positions.
#[derive(Clone, Debug)]
pub struct Unknowns {
    pub nodes: Vec<usize>,
    position: Vec<Option<usize>>,
}

impl Unknowns {
    pub fn new(grid: &Grid) -> Result<Self> {
        let nodes = grid.interior_nodes();
        if nodes.len() > MAX_UNKNOWNS {
            return Err(Error::Resource(format!(
                "{} interior unknowns exceed the dense budget of {MAX_UNKNOWNS}",
                nodes.len()
            )));
        }
        let mut position = vec![None; grid.len()];
        for (p, &i) in nodes.iter().enumerate() {
            position[i] = Some(p);
        }
        Ok(Self { nodes, position })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn position(&self, node: usize) -> Option<usize> {
        self.position[node]
    }

    pub fn gather(&self, u: &Field) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.nodes.iter().map(|&i| u.values[i]))
    }

    /// Copy of `data` with the interior values replaced by `x`.
    pub fn scatter(&self, data: &Field, x: &DVector<f64>) -> Field {
        let mut u = data.clone();
        for (p, &i) in self.nodes.iter().enumerate() {
            u.values[i] = x[p];
        }
        u
    }
}

/// `I(u)` at the interior nodes written as `A u_int + b`, where `b` collects
/// contributions of the exterior data.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub unknowns: Unknowns,
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearSystem {
    /// Assembles rows from per-node multipliers: row `p` represents
    /// `Σ_j w_j e_j δ_j` with `e = multipliers(p, node)`.
    pub fn assemble(
        op: &Operator,
        data: &Field,
        unknowns: &Unknowns,
        multipliers: impl Fn(usize, usize) -> Result<Vec<f64>> + Sync,
    ) -> Result<Self> {
        if !op.is_local() {
            return Err(Error::usage("dense assembly needs a local operator"));
        }
        let st = op.stencil().clone();
        let grid = *op.grid();
        let n = unknowns.len();
        let rows: Vec<(Vec<f64>, f64)> = unknowns
            .nodes
            .par_iter()
            .enumerate()
            .map(|(p, &node)| {
                let e = multipliers(p, node)?;
                let k = grid.lattice(node);
                let mut row = vec![0.0; n];
                let mut b = 0.0;
                for (j, wj) in st.weights().iter().enumerate() {
                    let m = wj * e[j];
                    if m == 0.0 {
                        continue;
                    }
                    st.for_each_tap(j, k, |t, c| match t {
                        TapTarget::Node(i) => match unknowns.position(i) {
                            Some(q) => row[q] += m * c,
                            None => b += m * c * data.values[i],
                        },
                        TapTarget::Point(x) => b += m * c * data.value_at(x),
                    });
                }
                Ok((row, b))
            })
            .collect::<Result<_>>()?;
        let mut matrix = DMatrix::zeros(n, n);
        let mut offset = DVector::zeros(n);
        for (p, (row, b)) in rows.into_iter().enumerate() {
            for (q, v) in row.into_iter().enumerate() {
                matrix[(p, q)] = v;
            }
            offset[p] = b;
        }
        Ok(Self {
            unknowns: unknowns.clone(),
            matrix,
            offset,
        })
    }

    /// `A u_int + b`.
    pub fn apply(&self, u: &Field) -> DVector<f64> {
        &self.matrix * self.unknowns.gather(u) + &self.offset
    }

    pub fn factor(&self) -> Result<Factored> {
        let lu = self.matrix.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::Solver("singular system matrix".into()));
        }
        Ok(Factored {
            lu,
            offset: self.offset.clone(),
        })
    }

    /// Solves `A x + b = f`.
    pub fn solve(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor()?.solve(f)
    }
}

pub struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    offset: DVector<f64>,
}

impl Factored {
    /// Solves `A x + b = f`.
    pub fn solve(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu
            .solve(&(f - &self.offset))
            .ok_or_else(|| Error::Solver("singular system matrix".into()))
    }
}

/// Rows of `C₀ L` (the fractional Laplacian quadrature scaled by `C₀`) at the
/// interior nodes, with exterior values of `data` folded into the offset.
pub fn assemble_fractional_laplacian(constants: Constants, c0: f64, data: &Field) -> Result<LinearSystem> {
    let spec = OperatorSpec::fractional(constants, c0)?;
    let op = Operator::new(&spec, data.grid)?;
    let unknowns = Unknowns::new(&data.grid)?;
    let ones = vec![c0; op.stencil().len()];
    LinearSystem::assemble(&op, data, &unknowns, |_, _| Ok(ones.clone()))
}

fn rhs_vector(p: &BVPProblem, unknowns: &Unknowns) -> DVector<f64> {
    unknowns.gather(&p.rhs)
}

fn sup_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

// ---------------------------------------------------------------------------
// Schemes

/// Direct dense solve for operators whose multipliers do not depend on `u`
/// (linear, frozen linear, regularized linear).
pub fn solve_linear_dirichlet(p: &BVPProblem) -> Result<SolveReport> {
    let start = Instant::now();
    if !is_linear(&p.operator) {
        return Err(Error::usage("solve_linear_dirichlet needs a linear operator"));
    }
    let op = Operator::new(&p.operator, p.grid)?;
    let data = p.initial_field()?;
    let unknowns = Unknowns::new(&p.grid)?;
    let sys = LinearSystem::assemble(&op, &data, &unknowns, |_, node| {
        Ok(op.local(&data, node, Want::Effective)?.1.expect("multipliers"))
    })?;
    let x = sys.solve(&rhs_vector(p, &unknowns))?;
    let u = unknowns.scatter(&data, &x);
    let mut report = SolveReport::new("direct");
    report.iterations = 1;
    report.residuals.push(residual(&p.operator, &u, &p.rhs)?.sup);
    report.converged = true;
    Ok(report.finish(u, start))
}

fn is_linear(spec: &OperatorSpec) -> bool {
    match spec {
        OperatorSpec::Linear { .. } => true,
        OperatorSpec::Frozen { inner, .. } | OperatorSpec::Regularized { inner, .. } => is_linear(inner),
        _ => false,
    }
}

/// Damped Picard iteration `u ← (1-θ)u + θ G[u]` for the regularized problem
/// `J^ε(u) = f`, where `G[u]` solves `λ L G = f - F(u)` with `F = J^ε - λ L`.
pub fn solve_fixed_point(p: &BVPProblem, eps: f64, theta: f64, tol: f64, max_iter: usize) -> Result<SolveReport> {
    let start = Instant::now();
    p.require_sigma_above_one("the fixed-point construction")?;
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::usage("damping θ must lie in (0, 1]"));
    }
    let c = p.constants();
    let jeps = p.operator.regularize(eps)?;
    let jop = Operator::new(&jeps, p.grid)?;
    let frac = Operator::new(&OperatorSpec::fractional(c, 1.0)?, p.grid)?;
    let mut u = p.initial_field()?;
    let sys = assemble_fractional_laplacian(c, c.lambda, &u)?;
    let unknowns = sys.unknowns.clone();
    let lu = sys.factor()?;
    let f = rhs_vector(p, &unknowns);

    let big_f = |u: &Field| -> Result<DVector<f64>> {
        let j = jop.eval_nodes(u, &unknowns.nodes)?;
        let l = frac.eval_nodes(u, &unknowns.nodes)?;
        Ok(DVector::from_iterator(
            unknowns.len(),
            j.iter().zip(&l).map(|(a, b)| a - c.lambda * b),
        ))
    };

    let mut report = SolveReport::new("fixed-point");
    report.residuals.push(residual(&p.operator, &u, &p.rhs)?.sup);
    let mut fu = big_f(&u)?;
    let mut lip: f64 = 0.0;
    for _ in 0..max_iter {
        let g = lu.solve(&(&f - &fu))?;
        let x = unknowns.gather(&u);
        let next = &x * (1.0 - theta) + &g * theta;
        let step = sup_diff(&next, &x);
        report.steps.push(step);
        if step <= tol {
            report.converged = true;
            break;
        }
        let un = unknowns.scatter(&u, &next);
        let fn_ = big_f(&un)?;
        lip = lip.max(sup_diff(&fn_, &fu) / step);
        u = un;
        fu = fn_;
        report.iterations += 1;
        report.residuals.push(residual(&p.operator, &u, &p.rhs)?.sup);
    }
    report.f_lipschitz = Some(lip);
    Ok(report.finish(u, start))
}

/// Howard iteration. Isaacs operators alternate an outer improvement of the
/// minimizing index `β` with an inner Howard loop over `α`; extremal operators
/// use a per-stencil-node policy. Linear operators take one solve.
pub fn solve_policy_iteration(p: &BVPProblem, tol: f64, max_iter: usize) -> Result<SolveReport> {
    let start = Instant::now();
    let op = Operator::new(&p.operator, p.grid)?;
    let data = p.initial_field()?;
    let unknowns = Unknowns::new(&p.grid)?;
    let f = rhs_vector(p, &unknowns);
    let mut report = SolveReport::new("policy-iteration");
    let mut u = data.clone();
    match &p.operator {
        OperatorSpec::Isaacs { family, .. } => {
            let n = unknowns.len();
            let tie = |v: f64| 1e-12 * (1.0 + v.abs());
            let values = |u: &Field| -> Result<Vec<Vec<Vec<f64>>>> {
                unknowns.nodes.par_iter().map(|&i| op.family_values(u, i)).collect()
            };
            let argmax = |row: &[f64], current: Option<usize>| -> usize {
                let mut best = current.unwrap_or(0);
                for (a, v) in row.iter().enumerate() {
                    if *v > row[best] + tie(row[best]) {
                        best = a;
                    }
                }
                best
            };
            let v0 = values(&u)?;
            let mut beta = vec![0usize; n];
            let mut alpha = vec![0usize; n];
            for q in 0..n {
                let sups: Vec<f64> = v0[q].iter().map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
                let mut b = 0;
                for (k, s) in sups.iter().enumerate() {
                    if *s < sups[b] - tie(sups[b]) {
                        b = k;
                    }
                }
                beta[q] = b;
                alpha[q] = argmax(&v0[q][b], None);
            }
            let _ = family;
            'outer: loop {
                // inner Howard over α with β fixed
                loop {
                    if report.iterations >= max_iter {
                        break 'outer;
                    }
                    let sys = LinearSystem::assemble(&op, &data, &unknowns, |q, node| {
                        op.family_row(beta[q], alpha[q], p.grid.node_point(node))
                    })?;
                    let x = sys.solve(&f)?;
                    u = unknowns.scatter(&data, &x);
                    report.iterations += 1;
                    report.residuals.push(residual(&p.operator, &u, &p.rhs)?.sup);
                    let v = values(&u)?;
                    let mut changed = false;
                    for q in 0..n {
                        let a = argmax(&v[q][beta[q]], Some(alpha[q]));
                        if a != alpha[q] {
                            alpha[q] = a;
                            changed = true;
                        }
                    }
                    if !changed {
                        break;
                    }
                }
                let v = values(&u)?;
                let mut changed = false;
                for q in 0..n {
                    let sups: Vec<f64> = v[q].iter().map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
                    let mut b = beta[q];
                    for (k, s) in sups.iter().enumerate() {
                        if *s < sups[b] - tie(sups[b]) {
                            b = k;
                        }
                    }
                    if b != beta[q] {
                        beta[q] = b;
                        alpha[q] = argmax(&v[q][b], None);
                        changed = true;
                    }
                }
                if !changed {
                    report.converged = true;
                    break;
                }
            }
        }
        OperatorSpec::ExtremalPlus { .. } | OperatorSpec::ExtremalMinus { .. } => {
            let mut policy: Option<Vec<Vec<f64>>> = None;
            while report.iterations < max_iter {
                let e: Vec<Vec<f64>> = unknowns
                    .nodes
                    .par_iter()
                    .map(|&i| Ok(op.local(&u, i, Want::Effective)?.1.expect("multipliers")))
                    .collect::<Result<_>>()?;
                if policy.as_ref() == Some(&e) {
                    report.converged = true;
                    break;
                }
                let sys = LinearSystem::assemble(&op, &data, &unknowns, |q, _| Ok(e[q].clone()))?;
                u = unknowns.scatter(&data, &sys.solve(&f)?);
                report.iterations += 1;
                let r = residual(&p.operator, &u, &p.rhs)?.sup;
                report.residuals.push(r);
                policy = Some(e);
                if r <= tol {
                    report.converged = true;
                    break;
                }
            }
        }
        spec if is_linear(spec) => {
            let mut r = solve_linear_dirichlet(p)?;
            r.scheme = "policy-iteration".into();
            r.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            return Ok(r);
        }
        _ => return Err(Error::usage("policy iteration needs an Isaacs, extremal or linear operator")),
    }
    if report.residuals.is_empty() {
        report.residuals.push(residual(&p.operator, &u, &p.rhs)?.sup);
    }
    if report.final_residual() <= tol {
        report.converged = true;
    }
    Ok(report.finish(u, start))
}

/// Damped Newton iteration for `ρ` operators, Jacobian multipliers
/// `∂_zρ(δ₂u(x, y), y)`; each step halves until the residual decreases.
pub fn solve_newton_rho(p: &BVPProblem, tol: f64, max_iter: usize, damping: f64) -> Result<SolveReport> {
    let start = Instant::now();
    p.require_sigma_above_one("Newton's method")?;
    if !matches!(p.operator, OperatorSpec::Rho { .. }) {
        return Err(Error::usage("solve_newton_rho needs a rho operator"));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::usage("Newton damping must lie in (0, 1]"));
    }
    let op = Operator::new(&p.operator, p.grid)?;
    let unknowns = Unknowns::new(&p.grid)?;
    let f = rhs_vector(p, &unknowns);
    let zero = {
        let mut z = p.initial_field()?.zeros_like();
        z.exterior = ExteriorData::zero();
        z
    };
    let res = |u: &Field| -> Result<DVector<f64>> {
        let v = op.eval_nodes(u, &unknowns.nodes)?;
        Ok(DVector::from_vec(v) - &f)
    };
    let mut u = p.initial_field()?;
    let mut r = res(&u)?;
    let mut report = SolveReport::new("newton");
    report.residuals.push(r.amax());
    while report.final_residual() > tol {
        if report.iterations >= max_iter {
            break;
        }
        let jac = LinearSystem::assemble(&op, &zero, &unknowns, |_, node| {
            Ok(op.local(&u, node, Want::Derivative)?.1.expect("multipliers"))
        })?;
        let du = jac.solve(&(-&r))?;
        let x = unknowns.gather(&u);
        let mut t = damping;
        let mut accepted = None;
        for _ in 0..=20 {
            let trial = unknowns.scatter(&u, &(&x + &du * t));
            let rt = res(&trial)?;
            if rt.amax() < r.amax() {
                accepted = Some((trial, rt));
                break;
            }
            t *= 0.5;
        }
        let Some((un, rn)) = accepted else {
            break;
        };
        u = un;
        r = rn;
        report.iterations += 1;
        report.residuals.push(r.amax());
    }
    // report the residual exactly as the diagnostics recompute it
    let last = residual(&p.operator, &u, &p.rhs)?.sup;
    *report.residuals.last_mut().unwrap() = last;
    report.converged = last <= tol;
    Ok(report.finish(u, start))
}

/// Bound on `|∂I(u, x)/∂u(x)|` used for the explicit step size.
fn diagonal_bound(spec: &OperatorSpec, grid: &Grid) -> Result<f64> {
    let c = spec.constants();
    Ok(match spec {
        OperatorSpec::Rescaled { inner, gamma, .. } => {
            let g = Grid::new(grid.dim, grid.h * gamma, grid.r_out)?;
            gamma.powf(c.sigma) * diagonal_bound(inner, &g)?
        }
        _ => c.upper * crate::operators::Stencil::get(grid, c.sigma).diagonal_mass(),
    })
}

/// Explicit Euler on `∂_t u = I(u) - f` with `Δt = cfl / (Λ · diagonal mass)`.
pub fn pseudo_time_march(p: &BVPProblem, cfl: f64, tol: f64, max_iter: usize) -> Result<SolveReport> {
    let u0 = p.initial_field()?;
    pseudo_time_march_from(p, u0, cfl, tol, max_iter, |_, _| {})
}

/// As [`pseudo_time_march`], from a given initial field, calling
/// `observe(step, u)` after every step.
pub fn pseudo_time_march_from(
    p: &BVPProblem,
    init: Field,
    cfl: f64,
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(usize, &Field),
) -> Result<SolveReport> {
    let start = Instant::now();
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::usage("cfl factor must lie in (0, 1]"));
    }
    if init.grid != p.grid {
        return Err(Error::usage("initial field is on another grid"));
    }
    let op = Operator::new(&p.operator, p.grid)?;
    let nodes = p.grid.interior_nodes();
    let dt = cfl / diagonal_bound(&p.operator, &p.grid)?;
    let mut u = init;
    // exterior values always come from the problem data
    let data = p.initial_field()?;
    for i in 0..u.values.len() {
        if !crate::fields::is_interior(p.grid.node_point(i)) {
            u.values[i] = data.values[i];
        }
    }
    u.exterior = p.exterior.clone();
    let members = assembled_members(p, &op, &data)?;
    let mut report = SolveReport::new("pseudo-time");
    loop {
        let v = match &members {
            Some(m) => m.eval(&u),
            None => op.eval_nodes(&u, &nodes)?,
        };
        let r: Vec<f64> = v.iter().zip(&nodes).map(|(a, &i)| a - p.rhs.values[i]).collect();
        let sup = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        report.residuals.push(sup);
        if sup <= tol {
            report.converged = true;
            break;
        }
        if report.iterations >= max_iter {
            break;
        }
        for (ri, &i) in r.iter().zip(&nodes) {
            u.values[i] += dt * ri;
        }
        report.iterations += 1;
        observe(report.iterations, &u);
    }
    Ok(report.finish(u, start))
}

/// Largest unknown count for which pseudo-time keeps dense member matrices.
const MEMBER_MATRIX_LIMIT: usize = 2_000;

/// Every family member of a linear or Isaacs operator as `A u_int + b`;
/// `I(u) = min_β max_α` over the member values.
struct Members {
    unknowns: Unknowns,
    systems: Vec<Vec<LinearSystem>>,
}

impl Members {
    fn eval(&self, u: &Field) -> Vec<f64> {
        let x = self.unknowns.gather(u);
        let vals: Vec<Vec<DVector<f64>>> = self
            .systems
            .iter()
            .map(|row| row.iter().map(|s| &s.matrix * &x + &s.offset).collect())
            .collect();
        (0..x.len())
            .map(|q| {
                vals.iter()
                    .map(|row| row.iter().map(|v| v[q]).fold(f64::NEG_INFINITY, f64::max))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

fn assembled_members(p: &BVPProblem, op: &Operator, data: &Field) -> Result<Option<Members>> {
    if !op.is_local() || p.grid.interior_nodes().len() > MEMBER_MATRIX_LIMIT {
        return Ok(None);
    }
    let unknowns = Unknowns::new(&p.grid)?;
    let systems = match &p.operator {
        OperatorSpec::Isaacs { family, .. } => family
            .iter()
            .enumerate()
            .map(|(b, row)| {
                (0..row.len())
                    .map(|a| LinearSystem::assemble(op, data, &unknowns, |_, node| op.family_row(b, a, p.grid.node_point(node))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?,
        spec if is_linear(spec) => vec![vec![LinearSystem::assemble(op, data, &unknowns, |_, node| {
            Ok(op.local(data, node, Want::Effective)?.1.expect("multipliers"))
        })?]],
        _ => return Ok(None),
    };
    Ok(Some(Members { unknowns, systems }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::Sign;

    fn problem(spec: OperatorSpec, h: f64, f: f64, g: f64) -> BVPProblem {
        let grid = Grid::new(1, h, 2.0).unwrap();
        let ext = ExteriorData::new(ClosedForm::Constant { value: g }).unwrap();
        BVPProblem::new(spec, grid, &ClosedForm::Constant { value: f }, ext).unwrap()
    }

    fn consts(sigma: f64) -> Constants {
        Constants::new(1, sigma, 0.5, 1.0, 2.0).unwrap()
    }

    #[test]
    fn assembly_matches_operator_and_annihilates_affine() {
        let c = consts(1.5);
        let grid = Grid::new(1, 1.0 / 32.0, 2.0).unwrap();
        let aff = ClosedForm::Affine {
            value: 0.3,
            slope: [-1.2, 0.0],
        };
        let u = Field::sample(grid, &aff, ExteriorData::new(aff.clone()).unwrap()).unwrap();
        let sys = assemble_fractional_laplacian(c, 1.0, &u).unwrap();
        assert!(sys.apply(&u).amax() < 1e-8);
        for p in 0..sys.unknowns.len() {
            assert!(sys.matrix[(p, p)] < 0.0);
            for q in 0..sys.unknowns.len() {
                if p != q {
                    assert!(sys.matrix[(p, q)] >= 0.0);
                }
            }
        }
        let bump = ClosedForm::Bump {
            center: [0.1, 0.0],
            radius: 0.6,
            amplitude: 1.0,
        };
        let v = Field::sample(grid, &bump, ExteriorData::new(bump.clone()).unwrap()).unwrap();
        let sys = assemble_fractional_laplacian(c, 1.0, &v).unwrap();
        let a = sys.apply(&v);
        let op = Operator::new(&OperatorSpec::fractional(c, 1.0).unwrap(), grid).unwrap();
        for (p, &i) in sys.unknowns.nodes.iter().enumerate() {
            assert!((a[p] - op.eval(&v, i).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn node_budget_is_enforced() {
        let grid = Grid::new(2, 1.0 / 64.0, 2.0).unwrap();
        assert!(matches!(Unknowns::new(&grid), Err(Error::Resource(_))));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let p = problem(OperatorSpec::fractional(consts(1.5), 1.0).unwrap(), 1.0 / 32.0, 0.0, 0.0);
        let r = solve_linear_dirichlet(&p).unwrap();
        assert!(r.field().values.iter().all(|v| *v == 0.0));
        let r = pseudo_time_march(&p, 0.9, 1e-12, 10).unwrap();
        assert!(r.converged && r.iterations == 0);
    }

    #[test]
    fn direct_solve_residual_and_sign() {
        let p = problem(OperatorSpec::fractional(consts(1.5), 1.0).unwrap(), 1.0 / 32.0, -1.0, 0.0);
        let r = solve_linear_dirichlet(&p).unwrap();
        assert!(r.final_residual() <= 1e-10 * 2.0);
        let u = r.field();
        let mid = u.grid.index([0, 0]).unwrap();
        assert!(u.values[mid] > 0.0);
        let p = problem(OperatorSpec::fractional(consts(1.5), 1.0).unwrap(), 1.0 / 32.0, 0.0, 0.5);
        let r = solve_linear_dirichlet(&p).unwrap();
        assert!(r.field().values.iter().all(|v| *v >= -1e-10));
    }

    #[test]
    fn policy_iteration_on_extremal_and_isaacs() {
        let c = consts(1.5);
        let p = problem(OperatorSpec::extremal(Sign::Plus, c).unwrap(), 1.0 / 32.0, -1.0, 0.0);
        let r = solve_policy_iteration(&p, 1e-10, 30).unwrap();
        assert!(r.converged && r.final_residual() < 1e-8, "{:?}", r.residuals);
        let p = problem(OperatorSpec::isaacs_four_kernel(c).unwrap(), 1.0 / 32.0, -1.0, 0.0);
        let r = solve_policy_iteration(&p, 1e-10, 50).unwrap();
        assert!(r.converged && r.final_residual() < 1e-8, "{:?}", r.residuals);
    }

    #[test]
    fn fixed_point_with_pure_fractional_inner_is_one_step() {
        let c = consts(1.5);
        let p = problem(OperatorSpec::fractional(c, c.lambda).unwrap(), 1.0 / 32.0, -1.0, 0.0);
        let direct = solve_linear_dirichlet(&p).unwrap();
        let fp = solve_fixed_point(&p, 0.1, 1.0, 1e-10, 20).unwrap();
        assert!(fp.converged);
        assert_eq!(fp.iterations, 1);
        let d = fp
            .field()
            .values
            .iter()
            .zip(&direct.field().values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d < 1e-10);
    }

    #[test]
    fn report_json_round_trip() {
        let c = consts(1.5);
        let p = problem(OperatorSpec::fractional(c, 1.0).unwrap(), 1.0 / 16.0, -1.0, 0.0);
        let r = solve_linear_dirichlet(&p).unwrap();
        let s = r.to_json().unwrap();
        let back: SolveReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back.residuals, r.residuals);
        assert_eq!(back.scheme, "direct");
    }
}
