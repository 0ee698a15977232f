#![allow(dead_code)]

use std::collections::BTreeMap;

use neocod_core::ingest::{Cell, ObservationRecord};
use neocod_core::{Cause, CauseSet, Period};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

/// Low-mortality observation where only the target and baseline carry
/// deaths; the other causes are reported as zero.
pub fn pair_observation(
    unit: &str,
    target: Cause,
    target_deaths: u64,
    baseline_deaths: u64,
    covariates: BTreeMap<String, f64>,
) -> ObservationRecord {
    let set = CauseSet::low_mortality();
    let cells = set
        .causes()
        .iter()
        .map(|&c| {
            let n = if c == target {
                target_deaths
            } else if c == set.baseline() {
                baseline_deaths
            } else {
                0
            };
            Cell::single(c, n)
        })
        .collect();
    ObservationRecord {
        unit_id: unit.into(),
        year: 2005,
        period: Period::Early,
        cells,
        total_deaths: target_deaths + baseline_deaths,
        covariates,
        source: "synthetic".into(),
    }
}

/// One observation per unit with target ~ Binomial(n, logistic(eta(x))).
/// `x` holds covariate draws, one map per unit.
pub fn simulate_pair<F>(
    rng: &mut ChaCha8Rng,
    target: Cause,
    n_units: usize,
    deaths: u64,
    draw_covariates: impl Fn(&mut ChaCha8Rng) -> BTreeMap<String, f64>,
    eta: F,
) -> Vec<ObservationRecord>
where
    F: Fn(&BTreeMap<String, f64>) -> f64,
{
    (0..n_units)
        .map(|i| {
            let cov = draw_covariates(rng);
            let p = 1.0 / (1.0 + (-eta(&cov)).exp());
            let t = Binomial::new(deaths, p).unwrap().sample(rng);
            pair_observation(&format!("u{i:03}"), target, t, deaths - t, cov)
        })
        .collect()
}

pub fn uniform_covariates(names: &'static [&'static str]) -> impl Fn(&mut ChaCha8Rng) -> BTreeMap<String, f64> {
    move |rng| {
        names
            .iter()
            .map(|n| (n.to_string(), rng.random_range(-1.0..1.0)))
            .collect()
    }
}
