//! Synthetic workloads shared by the benchmarks.

use std::collections::BTreeMap;

use neocod_core::basis::Transform;
use neocod_core::ingest::{Cell, ObservationRecord};
use neocod_core::mnlogit::{CovariateTerm, ModelSpec};
use neocod_core::{CauseSet, Period};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

/// Low-mortality early-period panel of `n_units` studies with Poisson cause
/// counts driven by two covariates, and the matching model specification.
pub fn low_mortality_panel(n_units: usize, seed: u64) -> (Vec<ObservationRecord>, ModelSpec) {
    let set = CauseSet::low_mortality();
    let spec = ModelSpec::shared(
        set.clone(),
        Period::Early,
        vec![
            CovariateTerm::new("NMR", Transform::Linear),
            CovariateTerm::new("femlit", Transform::Quadratic),
        ],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_units)
        .map(|i| {
            let nmr: f64 = rng.random_range(2.0..15.0);
            let femlit: f64 = rng.random_range(70.0..100.0);
            let cells: Vec<Cell> = set
                .causes()
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let eta = 0.4 - 0.3 * k as f64 + 0.05 * k as f64 * (nmr - 8.0) / 4.0 + 0.01 * (femlit - 85.0);
                    let n = Poisson::new(40.0 * eta.exp()).unwrap().sample(&mut rng) as u64;
                    Cell::single(c, n.max(1))
                })
                .collect();
            ObservationRecord {
                unit_id: format!("s{i:03}"),
                year: 2005,
                period: Period::Early,
                total_deaths: cells.iter().map(|c| c.deaths).sum(),
                cells,
                covariates: BTreeMap::from([("NMR".to_string(), nmr), ("femlit".to_string(), femlit)]),
                source: "synthetic".into(),
            }
        })
        .collect();
    (data, spec)
}
