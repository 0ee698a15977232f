use std::collections::BTreeMap;

use neocod_core::basis::{cap_to_range, rcs_basis, CapMode, CovariateRange};
use neocod_core::envelope::{
    aggregate, allocate_deaths, combine_periods, membership_table, split_envelope, AllocationResult, Grouping,
    Membership,
};
use neocod_core::ingest::{impute_scalar, impute_series, ImputeSource};
use neocod_core::uncertainty::{bootstrap, percentile, poisson_vr_interval, BootstrapOptions, Clamp, ResampleDesign};
use neocod_core::{Cause, CauseDistribution, Period};
use proptest::prelude::*;

const CAUSES: [Cause; 5] = [Cause::Preterm, Cause::Intrapartum, Cause::Congenital, Cause::Sepsis, Cause::Other];

fn distribution() -> impl Strategy<Value = CauseDistribution> {
    prop::collection::vec(0.0f64..10.0, CAUSES.len())
        .prop_filter("some weight", |w| w.iter().sum::<f64>() > 1e-3)
        .prop_map(|w| CauseDistribution::from_weights(CAUSES.iter().copied().zip(w).collect()).unwrap())
}

proptest! {
    #[test]
    fn split_parts_sum_to_total(total in 0.0f64..1e7, share in 0.0f64..=1.0) {
        let (e, l) = split_envelope(total, share).unwrap();
        prop_assert_eq!(e + l, total);
        prop_assert!(e >= 0.0 && l >= 0.0);
    }

    #[test]
    fn allocated_deaths_sum_to_envelope(d in distribution(), env in 0.0f64..1e9) {
        let deaths = allocate_deaths(&d, env).unwrap();
        let sum = deaths.iter().fold(0.0, |a, x| a + x.1);
        prop_assert_eq!(sum, env);
        prop_assert!(deaths.iter().all(|x| x.1 >= -1e-9 * env.max(1.0)));
    }

    #[test]
    fn combined_periods_add_deaths(de in distribution(), dl in distribution(),
                                   ee in 1.0f64..1e5, el in 1.0f64..1e5, births in 1e3f64..1e7) {
        let early = AllocationResult::allocate("u", 2010, Period::Early, &de, ee, births).unwrap();
        let late = AllocationResult::allocate("u", 2010, Period::Late, &dl, el, births).unwrap();
        let all = combine_periods(&early, &late).unwrap();
        for c in CAUSES {
            prop_assert!((all.deaths(c) - early.deaths(c) - late.deaths(c)).abs() <= 1e-9 * (ee + el));
        }
        let fsum: f64 = all.causes.iter().map(|c| c.fraction).sum();
        prop_assert!((fsum - 1.0).abs() < 1e-12);
        let rsum: f64 = all.causes.iter().map(|c| c.risk).sum();
        prop_assert!((rsum - all.nmr()).abs() <= 1e-9 * all.nmr().max(1.0));
    }

    #[test]
    fn global_pool_preserves_deaths(dists in prop::collection::vec(distribution(), 1..8),
                                    env in prop::collection::vec(1.0f64..1e5, 8)) {
        let results: Vec<_> = dists.iter().enumerate()
            .map(|(i, d)| AllocationResult::allocate(&format!("u{i}"), 2010, Period::Early, d, env[i], 1e6).unwrap())
            .collect();
        let members = membership_table(results.iter().map(|r| Membership {
            unit_id: r.unit_id.clone(), mdg_region: None, income_group: None, india_state_of: None,
        }).collect());
        let pooled = aggregate(&results, Grouping::Global, &members).unwrap();
        prop_assert_eq!(pooled.len(), 1);
        let total: f64 = env[..dists.len()].iter().sum();
        prop_assert!((pooled[0].total_deaths() - total).abs() <= 1e-9 * total);
        for c in CAUSES {
            let expect: f64 = results.iter().map(|r| r.deaths(c)).sum();
            prop_assert!((pooled[0].deaths(c) - expect).abs() <= 1e-9 * total);
        }
    }

    #[test]
    fn scalar_imputation_stays_between_neighbours(
        obs in prop::collection::btree_map(2000i32..2016, -50.0f64..50.0, 1..8)
    ) {
        let out = impute_scalar(&obs, 2000..=2015).unwrap();
        let lo = obs.values().copied().fold(f64::INFINITY, f64::min);
        let hi = obs.values().copied().fold(f64::NEG_INFINITY, f64::max);
        for y in 2000..=2015 {
            let v = &out[&y];
            match v.source {
                ImputeSource::Observed => prop_assert_eq!(v.value, obs[&y]),
                ImputeSource::Interpolated { before, after } => {
                    let (a, b) = (obs[&before], obs[&after]);
                    prop_assert!(before < y && y < after);
                    prop_assert!(v.value >= a.min(b) - 1e-12 && v.value <= a.max(b) + 1e-12);
                }
                ImputeSource::Nearest { year } => prop_assert_eq!(v.value, obs[&year]),
            }
            prop_assert!(v.value >= lo - 1e-12 && v.value <= hi + 1e-12);
        }
    }

    #[test]
    fn imputed_distributions_are_normalised(
        years in prop::collection::btree_set(2000i32..2013, 1..6),
        dists in prop::collection::vec(distribution(), 6)
    ) {
        let series: BTreeMap<i32, CauseDistribution> = years.iter().copied().zip(dists).collect();
        for (y, v) in impute_series(&series, 2000..=2012).unwrap() {
            prop_assert!((v.value.total() - 1.0).abs() < 1e-12, "year {} sums to {}", y, v.value.total());
            if !v.is_imputed() {
                prop_assert_eq!(&v.value, &series[&y]);
            }
        }
    }

    #[test]
    fn poisson_interval_brackets_point(total in 1.0f64..1e5, frac in 0.0f64..=1.0) {
        let deaths = (frac * total).floor();
        let iv = poisson_vr_interval(deaths, total).unwrap();
        prop_assert!(0.0 <= iv.lo && iv.lo <= iv.point && iv.point <= iv.hi && iv.hi <= 1.0);
    }

    #[test]
    fn percentile_is_monotone(mut v in prop::collection::vec(-1e3f64..1e3, 1..50), p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let (p, q) = (p.min(q), p.max(q));
        let a = percentile(&v, p).unwrap();
        let b = percentile(&v, q).unwrap();
        prop_assert!(a <= b);
        v.sort_by(f64::total_cmp);
        prop_assert!(v[0] <= a && b <= v[v.len() - 1]);
    }

    #[test]
    fn capping_keeps_values_in_range(min in -10.0f64..0.0, width in 0.0f64..10.0, x in -50.0f64..50.0) {
        let r = CovariateRange::new("x", min, min + width).unwrap();
        let capped = cap_to_range(x, &r, CapMode::Cap);
        prop_assert!(r.contains(capped));
        if r.contains(x) {
            prop_assert_eq!(capped, x);
        }
        prop_assert_eq!(cap_to_range(x, &r, CapMode::Passthrough), x);
    }

    #[test]
    fn spline_is_linear_below_first_knot(x in -20.0f64..0.0) {
        let knots = [0.0, 1.0, 2.5, 4.0];
        let b = rcs_basis(x, &knots).unwrap();
        prop_assert_eq!(b.len(), knots.len() - 1);
        prop_assert_eq!(b[0], x);
        prop_assert!(b[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resample_draw_keeps_stratum_sizes(sizes in prop::collection::vec(1usize..6, 1..4), seed: u64, r in 0u64..1000) {
        let mut next = 0;
        let strata: Vec<Vec<Vec<usize>>> = sizes.iter().map(|&n| (0..n).map(|_| { next += 1; vec![next - 1] }).collect()).collect();
        let design = ResampleDesign { strata: strata.clone() };
        let draw = design.draw(seed, r);
        prop_assert_eq!(&draw, &design.draw(seed, r));
        for (rows, units) in draw.iter().zip(&strata) {
            prop_assert_eq!(rows.len(), units.len());
            prop_assert!(rows.iter().all(|i| units.iter().any(|u| u[0] == *i)));
        }
    }
}

#[test]
fn bootstrap_is_independent_of_worker_count() {
    let values: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64).collect();
    let design = ResampleDesign { strata: vec![(0..values.len()).map(|i| vec![i]).collect()] };
    let mean = |rows: &[Vec<usize>]| Ok(vec![rows[0].iter().map(|&i| values[i]).sum::<f64>() / rows[0].len() as f64]);
    let runs: Vec<_> = [1, 2, 4]
        .iter()
        .map(|&jobs| bootstrap(&design, &BootstrapOptions { replicates: 300, seed: 9, jobs }, mean).unwrap())
        .collect();
    assert!(runs.windows(2).all(|w| w[0] == w[1]));
    let iv = runs[0].interval(0, 5.0, Clamp::NonNegative).unwrap();
    assert!(iv.lo < 5.0 && 5.0 < iv.hi);
}

#[test]
fn bootstrap_counts_failed_replicates() {
    let design = ResampleDesign { strata: vec![vec![vec![0], vec![1], vec![2]]] };
    let run = bootstrap(
        &design,
        &BootstrapOptions { replicates: 50, seed: 3, jobs: 1 },
        |rows| if rows[0].contains(&0) { Err(neocod_core::Error::validation("boom")) } else { Ok(vec![1.0]) },
    )
    .unwrap();
    assert_eq!(run.requested, 50);
    assert_eq!(run.failed + run.replicates.len(), 50);
    assert!(run.failed > 0);
}

#[test]
fn zero_vr_count_gets_exact_upper_bound() {
    let iv = poisson_vr_interval(0.0, 100.0).unwrap();
    assert_eq!(iv.lo, 0.0);
    assert!((iv.hi - 0.036_888_794_541_139_36).abs() < 1e-15);
    assert!(iv.flags.iter().any(|f| f.starts_with("zero_count")));
}

#[test]
fn mismatched_births_cannot_be_combined() {
    let d = CauseDistribution::uniform(&CAUSES);
    let e = AllocationResult::allocate("u", 2010, Period::Early, &d, 10.0, 1000.0).unwrap();
    let l = AllocationResult::allocate("u", 2010, Period::Late, &d, 5.0, 999.0).unwrap();
    assert!(combine_periods(&e, &l).is_err());
}
