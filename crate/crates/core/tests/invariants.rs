use proptest::prelude::*;
use sigmalab::diagnostics::sandwich_check;
use sigmalab::fields::{ClosedForm, ExteriorData, Field, Grid};
use sigmalab::kernels::WeightSpec;
use sigmalab::operators::{
    operator_distance, Constants, Operator, OperatorSpec, ProbeFamily, RhoSpec, Sign,
};
use sigmalab::probes::ProbeGenerator;

fn consts() -> Constants {
    Constants::new(1, 1.5, 0.5, 1.0, 2.0).unwrap()
}

fn grid() -> Grid {
    Grid::new(1, 1.0 / 32.0, 4.0).unwrap()
}

fn variants() -> Vec<OperatorSpec> {
    let c = consts();
    vec![
        OperatorSpec::fractional(c, 1.5).unwrap(),
        OperatorSpec::isaacs_four_kernel(c).unwrap(),
        OperatorSpec::rho(c, RhoSpec::softplus(1.0, 2.0).unwrap()).unwrap(),
        OperatorSpec::isaacs_four_kernel(c).unwrap().regularize(0.1).unwrap(),
        OperatorSpec::ripple(c, [std::f64::consts::PI, 0.0], 1.0).unwrap(),
    ]
}

fn interior(op: &Operator, u: &Field) -> Vec<f64> {
    op.eval_interior(u).unwrap().1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sandwich_holds_for_every_variant(seed in any::<u64>()) {
        let mut gen = ProbeGenerator::new(seed, 1);
        let g = grid();
        let u = gen.probe(g).unwrap();
        let v = gen.probe(g).unwrap();
        for spec in variants() {
            let tol = 1e-6 * (1.0 + v.curvature);
            let r = sandwich_check(&spec, &u.field, &v.field, tol).unwrap();
            prop_assert!(r.pass, "{spec:?}: {r:?}");
        }
    }

    #[test]
    fn extremal_duality(seed in any::<u64>()) {
        let g = grid();
        let u = ProbeGenerator::new(seed, 1).probe(g).unwrap().field;
        let c = consts();
        let plus = Operator::new(&OperatorSpec::extremal(Sign::Plus, c).unwrap(), g).unwrap();
        let minus = Operator::new(&OperatorSpec::extremal(Sign::Minus, c).unwrap(), g).unwrap();
        let a = interior(&plus, &u.scale(-1.0).unwrap());
        let b = interior(&minus, &u);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x + y).abs() <= 1e-10);
        }
    }

    #[test]
    fn affine_fields_are_annihilated(seed in any::<u64>()) {
        let g = grid();
        let mut gen = ProbeGenerator::new(seed, 1);
        let l = gen.affine();
        let (form, _) = gen.bump_sum();
        let u = Field::sample(g, &form, ExteriorData::new(form.clone()).unwrap()).unwrap();
        let sum = ClosedForm::Sum { terms: vec![form, l.clone()] };
        let w = Field::sample(g, &sum, ExteriorData::new(sum.clone()).unwrap()).unwrap();
        let lf = Field::sample(g, &l, ExteriorData::new(l.clone()).unwrap()).unwrap();
        for spec in variants() {
            let op = Operator::new(&spec, g).unwrap();
            let (a, b) = (interior(&op, &u), interior(&op, &w));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-8, "{spec:?}");
            }
            for v in interior(&op, &lf) {
                prop_assert!(v.abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn extremality_of_family_members(seed in any::<u64>()) {
        let g = grid();
        let u = ProbeGenerator::new(seed, 1).probe(g).unwrap().field;
        let c = consts();
        let OperatorSpec::Isaacs { family, .. } = OperatorSpec::isaacs_four_kernel(c).unwrap() else {
            unreachable!()
        };
        let hi = interior(&Operator::new(&OperatorSpec::extremal(Sign::Plus, c).unwrap(), g).unwrap(), &u);
        let lo = interior(&Operator::new(&OperatorSpec::extremal(Sign::Minus, c).unwrap(), g).unwrap(), &u);
        for k in family.into_iter().flatten() {
            let v = interior(&Operator::new(&OperatorSpec::linear(k), g).unwrap(), &u);
            for n in 0..v.len() {
                prop_assert!(lo[n] - 1e-10 <= v[n] && v[n] <= hi[n] + 1e-10);
            }
        }
    }

    #[test]
    fn extremal_plus_is_subadditive(seed in any::<u64>()) {
        let g = grid();
        let mut gen = ProbeGenerator::new(seed, 1);
        let u = gen.probe(g).unwrap().field;
        let v = gen.probe(g).unwrap().field;
        let plus = Operator::new(&OperatorSpec::extremal(Sign::Plus, consts()).unwrap(), g).unwrap();
        let w = interior(&plus, &u.combine(1.0, &v, 1.0).unwrap());
        let (a, b) = (interior(&plus, &u), interior(&plus, &v));
        for n in 0..w.len() {
            prop_assert!(w[n] <= a[n] + b[n] + 1e-10);
        }
    }

    #[test]
    fn weighted_l1_is_subadditive(seed in any::<u64>()) {
        let g = grid();
        let mut gen = ProbeGenerator::new(seed, 1);
        let u = gen.probe(g).unwrap().field;
        let v = gen.probe(g).unwrap().field;
        let w = WeightSpec::new(1, 0.5).unwrap();
        let s = u.combine(1.0, &v, 1.0).unwrap().weighted_l1_norm(&w).unwrap().value;
        let a = u.weighted_l1_norm(&w).unwrap().value;
        let b = v.weighted_l1_norm(&w).unwrap().value;
        prop_assert!(s <= a + b + 1e-12);
    }

    #[test]
    fn delta2_is_symmetric_in_y(seed in any::<u64>(), k in -20i64..20, m in 1i64..40) {
        let g = grid();
        let u = ProbeGenerator::new(seed, 1).probe(g).unwrap().field;
        prop_assert_eq!(u.delta2([k, 0], [m, 0]), u.delta2([k, 0], [-m, 0]));
    }
}

#[test]
fn evaluation_is_deterministic_across_runs() {
    let g = grid();
    let u = ProbeGenerator::new(11, 1).probe(g).unwrap().field;
    for spec in variants() {
        let op = Operator::new(&spec, g).unwrap();
        assert_eq!(interior(&op, &u), interior(&op, &u));
    }
}

#[test]
fn frozen_ripple_distance_shrinks_with_amplitude() {
    let c = consts();
    let fam = ProbeFamily::standard(1, c.sigma0).unwrap();
    let g = Grid::new(1, 1.0 / 32.0, 4.0).unwrap();
    let d: Vec<f64> = [1.0, 0.5, 0.25]
        .iter()
        .map(|&eta| {
            let l = OperatorSpec::ripple(c, [std::f64::consts::PI, 0.0], eta).unwrap();
            operator_distance(&l, &l.freeze([0.0, 0.0]), &fam, g).unwrap().value
        })
        .collect();
    assert!(d[0] > d[1] && d[1] > d[2] && d[2] > 0.0, "{d:?}");
    // linear in η for this family
    assert!((d[0] / d[1] - 2.0).abs() < 1e-6, "{d:?}");
}

#[test]
fn regularization_distance_decreases_with_eps() {
    let c = consts();
    let fam = ProbeFamily::standard(1, c.sigma0).unwrap();
    let g = Grid::new(1, 1.0 / 64.0, 4.0).unwrap();
    for inner in [OperatorSpec::isaacs_four_kernel(c).unwrap(), OperatorSpec::ripple(c, [std::f64::consts::PI, 0.0], 1.0).unwrap()] {
        let d: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&e| operator_distance(&inner, &inner.regularize(e).unwrap(), &fam, g).unwrap().value)
            .collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
    }
}

#[test]
fn regularized_pure_fractional_is_unchanged() {
    let c = Constants::new(1, 1.5, 0.5, 1.0, 1.0).unwrap();
    let inner = OperatorSpec::fractional(c, 1.0).unwrap();
    let g = grid();
    let u = ProbeGenerator::new(3, 1).probe(g).unwrap().field;
    let a = interior(&Operator::new(&inner, g).unwrap(), &u);
    let b = interior(&Operator::new(&inner.regularize(0.1).unwrap(), g).unwrap(), &u);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-8);
    }
}
