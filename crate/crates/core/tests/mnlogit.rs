use std::collections::BTreeMap;

use neocod_core::basis::Transform;
use neocod_core::ingest::{Cell, ObservationRecord};
use neocod_core::mnlogit::{
    fit, fit_data, predict_fractions, weighted_gradient, weighted_loglik, CoefficientSet, CovariateTerm,
    FitOptions, ModelData, ModelSpec,
};
use neocod_core::{Cause, CauseMask, CauseSet, ModelFamily, Period};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn three_causes() -> CauseSet {
    CauseSet::new(
        ModelFamily::LowMortality,
        vec![Cause::Preterm, Cause::Intrapartum, Cause::Sepsis],
        Cause::Preterm,
    )
    .unwrap()
}

fn obs(unit: &str, counts: &[(Cause, u64)], x: f64) -> ObservationRecord {
    ObservationRecord {
        unit_id: unit.into(),
        year: 2000,
        period: Period::Early,
        cells: counts.iter().map(|&(c, n)| Cell::single(c, n)).collect(),
        total_deaths: counts.iter().map(|c| c.1).sum(),
        covariates: BTreeMap::from([("x".to_string(), x)]),
        source: String::new(),
    }
}

fn five_obs() -> Vec<ObservationRecord> {
    let rows = [
        ([30, 10, 5], 0.2),
        ([25, 20, 8], 0.9),
        ([40, 15, 20], 1.7),
        ([12, 9, 11], 2.4),
        ([22, 30, 25], 3.1),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, (c, x))| {
            obs(
                &format!("u{i}"),
                &[(Cause::Preterm, c[0]), (Cause::Intrapartum, c[1]), (Cause::Sepsis, c[2])],
                *x,
            )
        })
        .collect()
}

#[test]
fn intercept_only_fit_equals_weighted_pooled_proportions() {
    let data = five_obs();
    let spec = ModelSpec::intercept_only(three_causes(), Period::Early);
    let res = fit(&data, &spec, &FitOptions::default()).unwrap();
    assert!(res.converged, "{:?}", res.warnings);
    let pred = predict_fractions(&res.coefficients, &BTreeMap::new(), &spec, Period::Early).unwrap();
    let mut num = [0.0; 3];
    let mut den = 0.0;
    for o in &data {
        let w = 1.0 / (o.total_deaths as f64).sqrt();
        for (k, cell) in o.cells.iter().enumerate() {
            num[k] += w * cell.deaths as f64;
        }
        den += w * o.total_deaths as f64;
    }
    for (k, cause) in [Cause::Preterm, Cause::Intrapartum, Cause::Sepsis].iter().enumerate() {
        let diff = (pred.get(*cause).unwrap() - num[k] / den).abs();
        assert!(diff < 1e-9, "{cause}: {diff}");
    }
}

#[test]
fn gradient_vanishes_at_converged_fit() {
    let data = five_obs();
    let spec = ModelSpec::shared(three_causes(), Period::Early, vec![CovariateTerm::new("x", Transform::Linear)]);
    let res = fit(&data, &spec, &FitOptions::default()).unwrap();
    assert!(res.converged);
    let g = weighted_gradient(&res.coefficients, &data, &spec).unwrap();
    assert!(g.iter().all(|v| v.abs() <= 1e-8), "{g:?}");
}

#[test]
fn full_cover_cell_has_zero_loglik() {
    let set = three_causes();
    let mut o = obs("a", &[], 1.0);
    o.cells = vec![Cell {
        causes: set.mask(),
        deaths: 40,
    }];
    o.total_deaths = 40;
    let spec = ModelSpec::shared(set, Period::Early, vec![CovariateTerm::new("x", Transform::Linear)]);
    let coef = CoefficientSet::from_params(&spec, &[0.3, -1.0, 2.0, 0.5]).unwrap();
    assert_eq!(weighted_loglik(&coef, &[o], &spec).unwrap(), 0.0);
}

#[test]
fn uniform_coefficients_give_uniform_loglik() {
    let o = obs("a", &[(Cause::Preterm, 10), (Cause::Intrapartum, 20), (Cause::Sepsis, 6)], 0.0);
    let spec = ModelSpec::intercept_only(three_causes(), Period::Early);
    let coef = CoefficientSet::from_params(&spec, &[0.0, 0.0]).unwrap();
    let expected = 36.0 * (1.0f64 / 3.0).ln() / 36.0f64.sqrt();
    assert!((weighted_loglik(&coef, &[o], &spec).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn binomial_loglik_matches_hand_formula() {
    let set = CauseSet::new(ModelFamily::LowMortality, vec![Cause::Preterm, Cause::Sepsis], Cause::Preterm).unwrap();
    let o = obs("a", &[(Cause::Preterm, 7), (Cause::Sepsis, 3)], 2.0);
    let spec = ModelSpec::shared(set, Period::Early, vec![CovariateTerm::new("x", Transform::Linear)]);
    let coef = CoefficientSet::from_params(&spec, &[-0.4, 0.25]).unwrap();
    let eta: f64 = -0.4 + 0.25 * 2.0;
    let p = 1.0 / (1.0 + (-eta).exp());
    let hand = (7.0 * (1.0 - p).ln() + 3.0 * p.ln()) / 10.0f64.sqrt();
    assert!((weighted_loglik(&coef, &[o], &spec).unwrap() - hand).abs() < 1e-12);
}

#[test]
fn doubling_weights_keeps_the_optimum() {
    let data = five_obs();
    let spec = ModelSpec::shared(three_causes(), Period::Early, vec![CovariateTerm::new("x", Transform::Quadratic)]);
    let md = ModelData::build(&data, &spec).unwrap();
    let a = fit_data(&md, &spec, &FitOptions::default()).unwrap();
    let mut doubled = md.clone();
    doubled.scale_weights(2.0);
    let b = fit_data(&doubled, &spec, &FitOptions::default()).unwrap();
    for (x, y) in a.params.iter().zip(&b.params) {
        assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn recovers_known_coefficients_from_large_counts() {
    let set = three_causes();
    let truth = [0.5, -0.8, -1.0, 0.6];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut data = Vec::new();
    for i in 0..60 {
        let x: f64 = rng.random_range(-1.0..1.0);
        let e1 = truth[0] + truth[1] * x;
        let e2 = truth[2] + truth[3] * x;
        let z = 1.0 + e1.exp() + e2.exp();
        let lambda = 4000.0;
        let draw = |p: f64, rng: &mut ChaCha8Rng| Poisson::new(lambda * p).unwrap().sample(rng) as u64;
        let counts = [draw(1.0 / z, &mut rng), draw(e1.exp() / z, &mut rng), draw(e2.exp() / z, &mut rng)];
        data.push(obs(
            &format!("u{i}"),
            &[(Cause::Preterm, counts[0]), (Cause::Intrapartum, counts[1]), (Cause::Sepsis, counts[2])],
            x,
        ));
    }
    let spec = ModelSpec::shared(set, Period::Early, vec![CovariateTerm::new("x", Transform::Linear)]);
    let res = fit(&data, &spec, &FitOptions::default()).unwrap();
    assert!(res.converged);
    // Monte-Carlo SE of each coefficient is roughly 0.01 at this size.
    for (est, t) in res.params.iter().zip(truth) {
        assert!((est - t).abs() < 0.05, "{est} vs {t}");
    }
}

#[test]
fn composite_cells_fit_and_keep_the_gradient_zero() {
    let set = three_causes();
    let mut data = five_obs();
    let merged = CauseMask::from_causes([Cause::Intrapartum, Cause::Sepsis]);
    let n = data[1].cells[1].deaths + data[1].cells[2].deaths;
    data[1].cells = vec![data[1].cells[0].clone(), Cell { causes: merged, deaths: n }];
    let spec = ModelSpec::shared(set, Period::Early, vec![CovariateTerm::new("x", Transform::Linear)]);
    let res = fit(&data, &spec, &FitOptions::default()).unwrap();
    assert!(res.converged, "{:?}", res.warnings);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_sum_to_one(params in prop::collection::vec(-5.0f64..5.0, 4), x in -10.0f64..10.0) {
        let spec = ModelSpec::shared(three_causes(), Period::Early, vec![CovariateTerm::new("x", Transform::Linear)]);
        let coef = CoefficientSet::from_params(&spec, &params).unwrap();
        let d = predict_fractions(&coef, &BTreeMap::from([("x".to_string(), x)]), &spec, Period::Early).unwrap();
        prop_assert!((d.total() - 1.0).abs() <= 1e-12);
    }
}
