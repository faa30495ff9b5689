//! Property suites over seeded random probes, each with a pass flag and a
//! margin (negative when the property is violated).

use serde::Serialize;
use sigmalab::diagnostics::sandwich_check;
use sigmalab::fields::{ClosedForm, ExteriorData, Field, Grid};
use sigmalab::kernels::{standard_samples, KernelSpec, Profile, WeightSpec};
use sigmalab::operators::{Constants, Operator, OperatorSpec, RhoSpec, Sign};
use sigmalab::probes::{ProbeGenerator, GENERATOR};
use sigmalab::Error;
use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Probe pairs per suite.
    pub pairs: usize,
    pub h: f64,
    /// Adds a kernel with `a = λ/2` to the kernel registry.
    pub inject_corrupt_kernel: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            pairs: 100,
            h: 1.0 / 64.0,
            inject_corrupt_kernel: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub pass: bool,
    /// Smallest slack over all checks; the property holds where it is `≥ 0`.
    pub margin: f64,
    pub checks: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub seed: u64,
    pub generator: &'static str,
    pub h: f64,
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }
}

struct Tally {
    margin: f64,
    checks: usize,
    worst: String,
}

impl Tally {
    fn new() -> Self {
        Self {
            margin: f64::INFINITY,
            checks: 0,
            worst: String::new(),
        }
    }

    fn add(&mut self, margin: f64, what: impl FnOnce() -> String) {
        self.checks += 1;
        if margin < self.margin || margin.is_nan() {
            self.margin = margin;
            self.worst = what();
        }
    }

    fn finish(self, name: &str) -> SuiteResult {
        SuiteResult {
            name: name.to_string(),
            pass: self.margin >= 0.0,
            margin: self.margin,
            checks: self.checks,
            detail: self.worst,
        }
    }
}

/// Operators exercised by the sandwich and annihilation suites.
pub fn sandwich_variants(c: Constants) -> sigmalab::Result<Vec<(&'static str, OperatorSpec)>> {
    let mid = 0.5 * (c.lambda + c.upper);
    Ok(vec![
        ("fractional", OperatorSpec::fractional(c, mid)?),
        ("isaacs-four-kernel", OperatorSpec::isaacs_four_kernel(c)?),
        ("softplus", OperatorSpec::rho(c, RhoSpec::softplus(c.lambda, c.upper)?)?),
        ("regularized-isaacs", OperatorSpec::isaacs_four_kernel(c)?.regularize(0.1)?),
        ("ripple", OperatorSpec::ripple(c, [PI, 0.0], 1.0)?),
    ])
}

fn registry(c: Constants, corrupt: bool) -> sigmalab::Result<Vec<(String, KernelSpec)>> {
    let mut out = vec![
        ("fractional-lambda".to_string(), c.constant_kernel(c.lambda)?),
        ("fractional-Lambda".to_string(), c.constant_kernel(c.upper)?),
    ];
    for name in ["isaacs-two-kernel", "isaacs-four-kernel", "ripple"] {
        let spec = match name {
            "isaacs-two-kernel" => OperatorSpec::isaacs_two_kernel(c)?,
            "isaacs-four-kernel" => OperatorSpec::isaacs_four_kernel(c)?,
            _ => OperatorSpec::ripple(c, [PI, 0.0], 1.0)?,
        };
        match spec {
            OperatorSpec::Isaacs { family, .. } => {
                for (i, k) in family.into_iter().flatten().enumerate() {
                    out.push((format!("{name}[{i}]"), k));
                }
            }
            OperatorSpec::Linear { kernel } => out.push((name.to_string(), kernel)),
            _ => unreachable!(),
        }
    }
    out.push((
        "checkerboard".to_string(),
        KernelSpec::new(
            c.dim,
            c.sigma,
            c.sigma0,
            c.ellipticity()?,
            Profile::Checkerboard {
                cell: 0.25,
                low: c.lambda,
                high: c.upper,
            },
        )?,
    ));
    if corrupt {
        out.push((
            "corrupt-half-lambda".to_string(),
            KernelSpec::unchecked(c.dim, c.sigma, c.sigma0, c.ellipticity()?, Profile::Constant { c: 0.5 * c.lambda })?,
        ));
    }
    Ok(out)
}

fn interior(op: &Operator, u: &Field) -> sigmalab::Result<Vec<f64>> {
    Ok(op.eval_interior(u)?.1)
}

fn ellipticity_suite(c: Constants, corrupt: bool) -> sigmalab::Result<SuiteResult> {
    let samples = standard_samples(c.dim);
    let mut t = Tally::new();
    for (name, k) in registry(c, corrupt)? {
        let r = k.check_ellipticity_bounds(&samples)?;
        // relative slack: worst_ratio ≥ 1 exactly when λ ≤ a ≤ Λ
        t.add(r.worst_ratio - 1.0, || format!("{name}: a ∈ [{:e}, {:e}]", r.min_coefficient, r.max_coefficient));
    }
    Ok(t.finish("kernel-ellipticity"))
}

/// Runs every suite on a lattice of spacing `opts.h` in the dimension of `c`.
pub fn verify(c: Constants, opts: &VerifyOptions) -> sigmalab::Result<VerifyReport> {
    let g = Grid::new(c.dim, opts.h, 4.0)?;
    let mut suites = vec![ellipticity_suite(c, opts.inject_corrupt_kernel)?];
    let variants = sandwich_variants(c)?;
    let ops: Vec<(&str, OperatorSpec, Operator)> = variants
        .into_iter()
        .map(|(n, s)| Operator::new(&s, g).map(|o| (n, s, o)))
        .collect::<sigmalab::Result<_>>()?;
    let plus = Operator::new(&OperatorSpec::extremal(Sign::Plus, c)?, g)?;
    let minus = Operator::new(&OperatorSpec::extremal(Sign::Minus, c)?, g)?;
    let mut gen = ProbeGenerator::new(opts.seed, c.dim);

    let mut sandwich = Tally::new();
    let mut corrupt = Tally::new();
    let corrupt_op = if opts.inject_corrupt_kernel {
        let k = KernelSpec::unchecked(c.dim, c.sigma, c.sigma0, c.ellipticity()?, Profile::Constant { c: 0.5 * c.lambda })?;
        Some(OperatorSpec::linear(k))
    } else {
        None
    };
    let mut duality = Tally::new();
    let mut annihilation = Tally::new();
    let mut extremality = Tally::new();
    let mut subadditivity = Tally::new();
    let mut symmetry = Tally::new();
    let mut l1 = Tally::new();
    let weight = WeightSpec::new(c.dim, c.sigma0)?;
    let OperatorSpec::Isaacs { family, .. } = OperatorSpec::isaacs_four_kernel(c)? else {
        unreachable!()
    };
    let members: Vec<Operator> = family
        .into_iter()
        .flatten()
        .map(|k| Operator::new(&OperatorSpec::linear(k), g))
        .collect::<sigmalab::Result<_>>()?;

    for pair in 0..opts.pairs {
        let u = gen.probe(g)?;
        let v = gen.probe(g)?;
        let tol = 1e-6 * (1.0 + v.curvature);
        for (name, spec, _) in &ops {
            let r = sandwich_check(spec, &u.field, &v.field, tol)?;
            sandwich.add(r.lower_margin.min(r.upper_margin) + tol, || format!("{name}, pair {pair}"));
        }
        if let Some(spec) = &corrupt_op {
            match sandwich_check(spec, &u.field, &v.field, tol) {
                Ok(r) => corrupt.add(r.lower_margin.min(r.upper_margin) + tol, || format!("corrupt-half-lambda, pair {pair}")),
                Err(Error::Ellipticity { value, lower, upper }) => {
                    let slack = (value / lower).min(upper / value) - 1.0;
                    corrupt.add(slack, || format!("corrupt-half-lambda rejected: a = {value} outside [{lower}, {upper}]"));
                }
                Err(e) => return Err(e),
            }
        }

        let a = interior(&plus, &u.field.scale(-1.0)?)?;
        let b = interior(&minus, &u.field)?;
        let worst = a.iter().zip(&b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
        duality.add(1e-10 - worst, || format!("pair {pair}: |M⁺(-u) + M⁻u| = {worst:e}"));

        let l = gen.affine();
        let sum = ClosedForm::Sum {
            terms: vec![u.form.clone(), l.clone()],
        };
        let w = Field::sample(g, &sum, ExteriorData::new(sum.clone())?)?;
        for (name, _, op) in &ops {
            let (x, y) = (interior(op, &u.field)?, interior(op, &w)?);
            let worst = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            annihilation.add(1e-8 - worst, || format!("{name}, pair {pair}: |I(u+l) - I(u)| = {worst:e}"));
        }

        let hi = interior(&plus, &u.field)?;
        let lo = interior(&minus, &u.field)?;
        for (m, op) in members.iter().enumerate() {
            let val = interior(op, &u.field)?;
            let worst = (0..val.len()).map(|n| (val[n] - hi[n]).max(lo[n] - val[n])).fold(f64::NEG_INFINITY, f64::max);
            extremality.add(1e-10 - worst, || format!("member {m}, pair {pair}"));
        }

        let s = interior(&plus, &u.field.combine(1.0, &v.field, 1.0)?)?;
        let pv = interior(&plus, &v.field)?;
        let worst = (0..s.len()).map(|n| s[n] - hi[n] - pv[n]).fold(f64::NEG_INFINITY, f64::max);
        subadditivity.add(1e-10 - worst, || format!("pair {pair}: M⁺(u+v) - M⁺u - M⁺v = {worst:e}"));

        let nodes = g.interior_nodes();
        let k = g.lattice(nodes[pair % nodes.len()]);
        let step = [(pair % 40) as i64 + 1, 0];
        let d = (u.field.delta2(k, step) - u.field.delta2(k, [-step[0], -step[1]])).abs();
        symmetry.add(if d == 0.0 { 0.0 } else { -d }, || format!("pair {pair}: |δ₂(y) - δ₂(-y)| = {d:e}"));

        let nu = u.field.weighted_l1_norm(&weight)?.value;
        let nv = v.field.weighted_l1_norm(&weight)?.value;
        let nw = u.field.combine(1.0, &v.field, 1.0)?.weighted_l1_norm(&weight)?.value;
        l1.add(nu + nv + 1e-12 - nw, || format!("pair {pair}"));
    }
    suites.push(sandwich.finish("sandwich"));
    if corrupt_op.is_some() {
        suites.push(corrupt.finish("sandwich-corrupt-kernel"));
    }
    suites.push(duality.finish("extremal-duality"));
    suites.push(annihilation.finish("affine-annihilation"));
    suites.push(extremality.finish("family-extremality"));
    suites.push(subadditivity.finish("extremal-subadditivity"));
    suites.push(symmetry.finish("delta2-symmetry"));
    suites.push(l1.finish("weighted-l1-subadditivity"));
    Ok(VerifyReport {
        pass: suites.iter().all(|s| s.pass),
        seed: opts.seed,
        generator: GENERATOR,
        h: opts.h,
        suites,
    })
}
