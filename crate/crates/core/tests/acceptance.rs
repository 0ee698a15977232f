//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{simulate_pair, uniform_covariates};
use neocod_core::basis::Transform;
use neocod_core::envelope::{combine_periods, compute_risk, round_half_up, AllocationResult, Grouping};
use neocod_core::ingest::icd::{IcdCategory, IcdMapping, IcdRevision};
use neocod_core::ingest::{
    build_vr_distribution, impute_series, map_icd_code, Cell, ConflictPolicy, ImputeSource, ObservationRecord,
    VrRecord,
};
use neocod_core::mnlogit::{
    fit, fit_data, linear_predictors, predict_fractions, published_coefficients, weighted_gradient,
    weighted_loglik, CoefficientSet, CovariateTerm, FitOptions, ModelData, ModelSpec,
};
use neocod_core::pipeline::demo::generate_demo;
use neocod_core::pipeline::report::{AggregateArtifact, AGGREGATE_FILE};
use neocod_core::pipeline::{self, Overrides, RunConfig};
use neocod_core::select::{forward_select, SelectionOptions};
use neocod_core::uncertainty::{bootstrap, BootstrapOptions, Clamp, ResampleDesign};
use neocod_core::{Cause, CauseDistribution, CauseSet, ModelFamily, Period};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, t: Instant, mut o: Outcome) -> Outcome {
    let took = t.elapsed();
    if took > limit {
        o.pass = false;
        o.detail = format!("{}; took {took:.2?}, limit {limit:?}", o.detail);
    } else {
        o.detail = format!("{} [{took:.2?}]", o.detail);
    }
    o
}

// ---------------------------------------------------------------- global table

const TABLE_CAUSES: [Cause; 8] = [
    Cause::Preterm,
    Cause::Intrapartum,
    Cause::Congenital,
    Cause::Sepsis,
    Cause::Pneumonia,
    Cause::Diarrhoea,
    Cause::Tetanus,
    Cause::Other,
];
/// Thousands of deaths.
const EARLY_K: [f64; 8] = [834.8, 552.7, 217.0, 163.7, 98.9, 6.7, 21.1, 149.9];
const LATE_K: [f64; 8] = [152.1, 92.1, 72.8, 266.7, 37.6, 10.0, 27.1, 57.9];
const OVERALL_K: [f64; 8] = [986.9, 644.8, 289.8, 430.4, 136.4, 16.6, 48.2, 207.8];
const OVERALL_PCT: [f64; 8] = [35.7, 23.4, 10.5, 15.6, 4.9, 0.6, 1.7, 7.5];
const OVERALL_RISK: [f64; 8] = [7.2, 4.7, 2.1, 3.1, 1.0, 0.1, 0.3, 1.5];

fn period_result(period: Period, deaths_k: &[f64; 8], births: f64) -> AllocationResult {
    let total: f64 = deaths_k.iter().sum();
    let dist =
        CauseDistribution::new(TABLE_CAUSES.iter().zip(deaths_k).map(|(&c, d)| (c, d / total)).collect()).unwrap();
    AllocationResult::allocate("global", 2013, period, &dist, total * 1000.0, births).unwrap()
}

fn criterion_1() -> Outcome {
    let births = 137.07e6;
    let early = period_result(Period::Early, &EARLY_K, births);
    let late = period_result(Period::Late, &LATE_K, births);
    let overall = combine_periods(&early, &late).unwrap();
    let mut deaths_off = Vec::new();
    let mut pct_off = Vec::new();
    for (i, &c) in TABLE_CAUSES.iter().enumerate() {
        let d = round_half_up(overall.deaths(c) / 1000.0, 1);
        if d != OVERALL_K[i] {
            deaths_off.push(format!("{} {d} vs {}", c.label(), OVERALL_K[i]));
        }
        let pct = 100.0 * overall.cause(c).unwrap().fraction;
        if (pct - OVERALL_PCT[i]).abs() > 0.1 + 1e-9 {
            pct_off.push(format!("{} {pct:.3} vs {}", c.label(), OVERALL_PCT[i]));
        }
    }
    let detail = format!(
        "overall deaths exact in {}/8 rows{}; percentages within 0.1 in {}/8{}",
        8 - deaths_off.len(),
        if deaths_off.is_empty() { String::new() } else { format!(" (off: {})", deaths_off.join(", ")) },
        8 - pct_off.len(),
        if pct_off.is_empty() { String::new() } else { format!(" (off: {})", pct_off.join(", ")) },
    );
    outcome(deaths_off.is_empty() && pct_off.is_empty(), detail)
}

fn criterion_2() -> Outcome {
    // Live births implied by the preterm row: 986.9 thousand deaths at 7.2 per 1000.
    let births = 986.9e3 / 7.2 * 1000.0;
    let mut off = Vec::new();
    for (i, &c) in TABLE_CAUSES.iter().enumerate() {
        let r = compute_risk(OVERALL_K[i] * 1000.0, births).unwrap();
        if (r - OVERALL_RISK[i]).abs() > 0.05 + 1e-9 {
            off.push(format!("{} {r:.4} vs {}", c.label(), OVERALL_RISK[i]));
        }
    }
    outcome(
        off.is_empty(),
        format!(
            "births {:.2}M; risks within 0.05 in {}/8 rows{}",
            births / 1e6,
            8 - off.len(),
            if off.is_empty() { String::new() } else { format!(" (off: {})", off.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- coefficients

fn criterion_3() -> Outcome {
    let file = published_coefficients();
    let set = file.get(ModelFamily::LowMortality, Period::Early).expect("low early equations");
    let eq = set.equation(Cause::Intrapartum).expect("intrapartum equation").clone();
    let pair = CauseSet::low_mortality().pair(Cause::Intrapartum).unwrap();
    let spec = ModelSpec::shared(pair, Period::Early, vec![CovariateTerm::new("femlit", Transform::Linear)]);
    let coef = CoefficientSet {
        family: ModelFamily::LowMortality,
        period: Period::Early,
        equations: vec![eq],
    };
    let cov = BTreeMap::from([("femlit".to_string(), 93.0)]);
    let eta = linear_predictors(&coef, &cov, &spec, Period::Early)
        .unwrap()
        .into_iter()
        .find(|(c, _)| *c == Cause::Intrapartum)
        .unwrap()
        .1;
    let ratio = eta.exp();
    outcome(
        (eta + 1.102).abs() <= 1e-9 && (ratio - 0.3322).abs() <= 1e-4,
        format!("eta {eta:.12}, ratio {ratio:.6}"),
    )
}

// ---------------------------------------------------------------- likelihood

fn three_causes() -> CauseSet {
    CauseSet::new(
        ModelFamily::LowMortality,
        vec![Cause::Preterm, Cause::Intrapartum, Cause::Sepsis],
        Cause::Preterm,
    )
    .unwrap()
}

fn obs(unit: &str, counts: [u64; 3], x: f64) -> ObservationRecord {
    let causes = [Cause::Preterm, Cause::Intrapartum, Cause::Sepsis];
    ObservationRecord {
        unit_id: unit.into(),
        year: 2000,
        period: Period::Early,
        cells: causes.iter().zip(counts).map(|(&c, n)| Cell::single(c, n)).collect(),
        total_deaths: counts.iter().sum(),
        covariates: BTreeMap::from([("x".to_string(), x)]),
        source: String::new(),
    }
}

fn five_obs() -> Vec<ObservationRecord> {
    vec![
        obs("a", [30, 10, 5], 0.2),
        obs("b", [25, 20, 8], 0.9),
        obs("c", [40, 15, 20], 1.7),
        obs("d", [12, 9, 11], 2.4),
        obs("e", [22, 30, 25], 3.1),
    ]
}

/// Weighted grouped-multinomial log-likelihood written out directly:
/// parameters are (a1, b1, a2, b2) for the two non-baseline causes.
fn oracle_loglik(data: &[ObservationRecord], p: &[f64; 4]) -> f64 {
    data.iter()
        .map(|o| {
            let x = o.covariates["x"];
            let e1 = (p[0] + p[1] * x).exp();
            let e2 = (p[2] + p[3] * x).exp();
            let z = 1.0 + e1 + e2;
            let probs = [1.0 / z, e1 / z, e2 / z];
            let ll: f64 = o.cells.iter().zip(probs).map(|(c, q)| c.deaths as f64 * q.ln()).sum();
            ll / (o.total_deaths as f64).sqrt()
        })
        .sum()
}

/// Maximiser by repeated grid refinement: a coarse 4-d grid, then grids of
/// shrinking spacing centred on the incumbent.
fn grid_maximiser(data: &[ObservationRecord]) -> ([f64; 4], f64) {
    let mut best = [0.0; 4];
    let mut best_ll = oracle_loglik(data, &best);
    let mut step = 0.5;
    let mut half_width: usize = 10;
    while step > 1e-8 {
        let centre = best;
        let n: usize = 2 * half_width + 1;
        for idx in 0..n.pow(4) {
            let mut p = [0.0; 4];
            let mut k = idx;
            for (j, pj) in p.iter_mut().enumerate() {
                *pj = centre[j] + (((k % n) as f64) - half_width as f64) * step;
                k /= n;
            }
            let ll = oracle_loglik(data, &p);
            if ll > best_ll {
                best_ll = ll;
                best = p;
            }
        }
        step /= 4.0;
        half_width = 4;
    }
    (best, best_ll)
}

fn criterion_4() -> Outcome {
    let data = five_obs();
    let spec = ModelSpec::shared(three_causes(), Period::Early, vec![CovariateTerm::new("x", Transform::Linear)]);
    let res = fit(&data, &spec, &FitOptions::default()).unwrap();
    let (grid, grid_ll) = grid_maximiser(&data);
    let fit_ll = weighted_loglik(&res.coefficients, &data, &spec).unwrap();
    let coef_err = res.params.iter().zip(grid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ll_err = (fit_ll - grid_ll).abs();

    let null_spec = ModelSpec::intercept_only(three_causes(), Period::Early);
    let null = fit(&data, &null_spec, &FitOptions::default()).unwrap();
    let pred = predict_fractions(&null.coefficients, &BTreeMap::new(), &null_spec, Period::Early).unwrap();
    let mut num = [0.0; 3];
    let mut den = 0.0;
    for o in &data {
        let w = 1.0 / (o.total_deaths as f64).sqrt();
        for (k, c) in o.cells.iter().enumerate() {
            num[k] += w * c.deaths as f64;
        }
        den += w * o.total_deaths as f64;
    }
    let pooled_err = [Cause::Preterm, Cause::Intrapartum, Cause::Sepsis]
        .iter()
        .enumerate()
        .map(|(k, &c)| (pred.get(c).unwrap() - num[k] / den).abs())
        .fold(0.0, f64::max);
    outcome(
        res.converged && coef_err <= 1e-4 && ll_err <= 1e-8 && pooled_err <= 1e-9,
        format!("coef diff {coef_err:.2e}, loglik diff {ll_err:.2e}, pooled-proportion diff {pooled_err:.2e}"),
    )
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<ObservationRecord>, ModelSpec, Vec<f64>) {
    let set = CauseSet::low_mortality();
    let spec = ModelSpec::shared(
        set.clone(),
        Period::Early,
        vec![
            CovariateTerm::new("x", Transform::Linear),
            CovariateTerm::new("z", Transform::Quadratic),
        ],
    );
    let n_obs = rng.random_range(3..12);
    let data = (0..n_obs)
        .map(|i| {
            let mut cells: Vec<Cell> = set
                .causes()
                .iter()
                .map(|&c| Cell::single(c, rng.random_range(0..60)))
                .collect();
            // Merge a random pair of cells into one composite cell.
            if rng.random_bool(0.6) {
                let a = rng.random_range(0..cells.len());
                let mut b = rng.random_range(0..cells.len() - 1);
                if b >= a {
                    b += 1;
                }
                let (lo, hi) = (a.min(b), a.max(b));
                let merged = cells.remove(hi);
                cells[lo] = Cell {
                    causes: cells[lo].causes.union(merged.causes),
                    deaths: cells[lo].deaths + merged.deaths,
                };
            }
            if cells.iter().all(|c| c.deaths == 0) {
                cells[0].deaths = 1;
            }
            ObservationRecord {
                unit_id: format!("u{i}"),
                year: 2000,
                period: Period::Early,
                total_deaths: cells.iter().map(|c| c.deaths).sum(),
                cells,
                covariates: BTreeMap::from([
                    ("x".to_string(), rng.random_range(-2.0..2.0)),
                    ("z".to_string(), rng.random_range(-1.5..1.5)),
                ]),
                source: String::new(),
            }
        })
        .collect();
    let params = (0..spec.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    (data, spec, params)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    let mut composite = 0;
    for _ in 0..50 {
        let (data, spec, params) = random_instance(&mut rng);
        composite += data.iter().filter(|o| o.cells.iter().any(|c| c.causes.len() > 1)).count();
        let coef = CoefficientSet::from_params(&spec, &params).unwrap();
        let analytic = weighted_gradient(&coef, &data, &spec).unwrap();
        let md = ModelData::build(&data, &spec).unwrap();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..params.len())
            .map(|j| {
                let mut up = params.clone();
                let mut down = params.clone();
                up[j] += h;
                down[j] -= h;
                (md.loglik(&up) - md.loglik(&down)) / (2.0 * h)
            })
            .collect();
        let scale = analytic.iter().fold(1.0f64, |m, g| m.max(g.abs()));
        let err = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max)
            / scale;
        worst = worst.max(err);
    }
    outcome(
        worst < 1e-6 && composite > 0,
        format!("worst relative error {worst:.2e} over 50 instances ({composite} observations with composite cells)"),
    )
}

// ---------------------------------------------------------------- bootstrap

fn coverage_data(rng: &mut ChaCha8Rng, truth: &[f64; 4]) -> Vec<ObservationRecord> {
    (0..25)
        .map(|i| {
            let x: f64 = rng.random_range(-1.0..1.0);
            let e1 = (truth[0] + truth[1] * x).exp();
            let e2 = (truth[2] + truth[3] * x).exp();
            let z = 1.0 + e1 + e2;
            let lambda = 150.0;
            let mut counts = [0u64; 3];
            for (k, p) in [1.0 / z, e1 / z, e2 / z].into_iter().enumerate() {
                counts[k] = Poisson::new(lambda * p).unwrap().sample(rng) as u64;
            }
            if counts.iter().sum::<u64>() == 0 {
                counts[0] = 1;
            }
            obs(&format!("u{i}"), counts, x)
        })
        .collect()
}

fn coverage_interval(data: &[ObservationRecord], seed: u64, jobs: usize, replicates: usize) -> (f64, f64) {
    let spec = ModelSpec::shared(three_causes(), Period::Early, vec![CovariateTerm::new("x", Transform::Linear)]);
    let md = ModelData::build(data, &spec).unwrap();
    let at = BTreeMap::from([("x".to_string(), 0.3)]);
    let design = ResampleDesign {
        strata: vec![(0..data.len()).map(|i| vec![i]).collect()],
    };
    let options = FitOptions::default();
    let run = bootstrap(
        &design,
        &BootstrapOptions { replicates, seed, jobs },
        |rows| {
            let res = fit_data(&md.subset(&rows[0]), &spec, &options)?;
            let d = predict_fractions(&res.coefficients, &at, &spec, Period::Early)?;
            Ok(vec![d.get(Cause::Intrapartum).unwrap()])
        },
    )
    .unwrap();
    let point = {
        let res = fit_data(&md, &spec, &options).unwrap();
        predict_fractions(&res.coefficients, &at, &spec, Period::Early)
            .unwrap()
            .get(Cause::Intrapartum)
            .unwrap()
    };
    let iv = run.interval(0, point, Clamp::UnitInterval).unwrap();
    (iv.lo, iv.hi)
}

fn criterion_6() -> Outcome {
    let truth: [f64; 4] = [-0.4, 0.8, -0.9, -0.5];
    let true_fraction = {
        let x = 0.3;
        let e1 = (truth[0] + truth[1] * x).exp();
        let e2 = (truth[2] + truth[3] * x).exp();
        e1 / (1.0 + e1 + e2)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let first = coverage_data(&mut rng, &truth);
    let reference = coverage_interval(&first, 7, 1, 1000);
    let identical = [2, 3, 8].iter().all(|&jobs| {
        let iv = coverage_interval(&first, 7, jobs, 1000);
        iv.0.to_bits() == reference.0.to_bits() && iv.1.to_bits() == reference.1.to_bits()
    });
    let mut covered = 0;
    let trials = 200;
    for t in 0..trials {
        let data = if t == 0 { first.clone() } else { coverage_data(&mut rng, &truth) };
        let (lo, hi) = coverage_interval(&data, 1000 + t as u64, 0, 1000);
        if lo <= true_fraction && true_fraction <= hi {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    outcome(
        identical && (0.90..=0.99).contains(&rate),
        format!(
            "intervals bit-identical across 1/2/3/8 workers: {identical}; coverage {covered}/{trials} = {:.1}%",
            100.0 * rate
        ),
    )
}

// ---------------------------------------------------------------- imputation

fn dist(p: f64, q: f64) -> CauseDistribution {
    CauseDistribution::new(vec![(Cause::Preterm, p), (Cause::Intrapartum, q), (Cause::Other, 1.0 - p - q)]).unwrap()
}

fn criterion_7() -> Outcome {
    let mut problems = Vec::new();
    // Missing 2005 and 2012, observed otherwise.
    let mut series: BTreeMap<i32, CauseDistribution> = (2000..=2011)
        .filter(|&y| y != 2005)
        .map(|y| (y, dist(0.30 + 0.01 * f64::from(y - 2000), 0.20)))
        .collect();
    series.insert(2004, dist(0.40, 0.20));
    series.insert(2006, dist(0.50, 0.10));
    let out = impute_series(&series, 2000..=2012).unwrap();
    let mid = &out[&2005];
    let expect = dist(0.45, 0.15);
    if mid.source != (ImputeSource::Interpolated { before: 2004, after: 2006 })
        || expect.iter().zip(mid.value.iter()).any(|(a, b)| (a.1 - b.1).abs() > 1e-12)
    {
        problems.push(format!("interior 2005 gave {:?}", mid.value));
    }
    if out[&2012].value != series[&2011] || out[&2012].source != (ImputeSource::Nearest { year: 2011 }) {
        problems.push("trailing 2012 did not copy 2011".into());
    }
    // Missing leading years copy the first observed one.
    let late_start: BTreeMap<i32, CauseDistribution> = (2007..=2012).map(|y| (y, dist(0.3, 0.1 + 0.01 * f64::from(y - 2007)))).collect();
    let lead = impute_series(&late_start, 2000..=2012).unwrap();
    if (2000..2007).any(|y| lead[&y].value != late_start[&2007]) {
        problems.push("leading years did not copy 2007".into());
    }
    // A complete series passes through untouched.
    let full: BTreeMap<i32, CauseDistribution> =
        (2000..=2012).map(|y| (y, dist(0.2 + 0.013 * f64::from(y - 2000), 0.31))).collect();
    let same = impute_series(&full, 2000..=2012).unwrap();
    if full.iter().any(|(y, d)| same[y].value != *d || same[y].is_imputed()) {
        problems.push("complete series changed".into());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "interior midpoint, edge carry and untouched complete series all exact".to_string()
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- selection

fn criterion_8() -> Outcome {
    let options = SelectionOptions::for_family(ModelFamily::LowMortality);
    let set = CauseSet::low_mortality();
    let target = Cause::Sepsis;
    let names = ["n1", "n2", "n3"];
    let candidates: Vec<String> = names.iter().map(|s| s.to_string()).collect();

    let mut monotone_runs = 0;
    let mut runs = 0;
    let mut noise_zero = 0;
    let mut noise_reductions = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let data = simulate_pair(&mut rng, target, 30, 200, uniform_covariates(&["n1", "n2", "n3"]), |_| -1.0);
        let trace = forward_select(&data, &set, Period::Early, target, &candidates, &options).unwrap();
        runs += 1;
        if trace.accepted_path().windows(2).all(|w| w[1] < w[0]) {
            monotone_runs += 1;
        }
        if trace.percent_reduction == 0.0 {
            noise_zero += 1;
        } else {
            noise_reductions.push(format!("{:.1}%", trace.percent_reduction));
        }
    }
    let mut strong = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let data = simulate_pair(&mut rng, target, 30, 300, uniform_covariates(&["s", "n1", "n2"]), |c| {
            0.5 + 2.0 * c["s"]
        });
        let cands: Vec<String> = ["s", "n1", "n2"].iter().map(|s| s.to_string()).collect();
        let trace = forward_select(&data, &set, Period::Early, target, &cands, &options).unwrap();
        runs += 1;
        if trace.accepted_path().windows(2).all(|w| w[1] < w[0]) {
            monotone_runs += 1;
        }
        strong.push(trace.percent_reduction);
    }
    let strong_min = strong.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        monotone_runs == runs && noise_zero == 20 && strong_min >= 80.0,
        format!(
            "strictly decreasing paths {monotone_runs}/{runs}; pure-noise panels at 0% {noise_zero}/20{}; \
             strong covariate reduction min {strong_min:.1}% over 5 panels",
            if noise_reductions.is_empty() { String::new() } else { format!(" (others: {})", noise_reductions.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- sensitivity

fn run_demo(dir: &Path, name: &str, o: Overrides) -> AggregateArtifact {
    let mut cfg = RunConfig::load(&dir.join("config.toml")).unwrap();
    cfg.apply(&Overrides {
        out: Some(dir.join(name)),
        bootstrap_n: Some(40),
        ..o
    })
    .unwrap();
    pipeline::run(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.join(name).join(AGGREGATE_FILE)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn rows(a: &AggregateArtifact) -> BTreeMap<(String, i32, Period), &AllocationResult> {
    a.countries.iter().map(|r| ((r.unit_id.clone(), r.year, r.period), r)).collect()
}

fn global_overall_preterm(a: &AggregateArtifact, year: i32) -> f64 {
    a.group(Grouping::Global, "global", year, Period::Overall)
        .and_then(|g| g.cause(Cause::Preterm))
        .unwrap()
        .fraction
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate_demo(dir, 1).unwrap();
    let base = run_demo(dir, "base", Overrides::default());
    let low = run_demo(dir, "share65", Overrides { early_share: Some(0.65), ..Default::default() });
    let high = run_demo(dir, "share85", Overrides { early_share: Some(0.85), ..Default::default() });
    let uncapped = run_demo(dir, "nocap", Overrides { no_cap: true, ..Default::default() });
    let base_rows = rows(&base);
    let year = 2012;

    let mut problems = Vec::new();
    for (label, alt) in [("0.65", &low), ("0.85", &high)] {
        let mut vr_changed = 0;
        let mut modelled_changed = 0;
        for (key, r) in rows(alt) {
            let b = base_rows[&key];
            let same = b.causes == r.causes;
            let is_vr = r.method == Some(neocod_core::ingest::EstimationMethod::Vr);
            if is_vr && !same {
                vr_changed += 1;
            }
            if !is_vr && !same {
                modelled_changed += 1;
            }
        }
        if vr_changed > 0 || modelled_changed == 0 {
            problems.push(format!("share {label}: {vr_changed} VR rows changed, {modelled_changed} modelled rows changed"));
        }
    }
    let (p65, p74, p85) = (
        global_overall_preterm(&low, year),
        global_overall_preterm(&base, year),
        global_overall_preterm(&high, year),
    );
    if !(p65 < p74 && p74 < p85) {
        problems.push(format!("preterm share not ordered: {p65:.4} / {p74:.4} / {p85:.4}"));
    }

    // Units whose covariates were capped in the base run, plus national
    // totals built from any capped state.
    let capped_units: std::collections::BTreeSet<(String, i32)> = base
        .countries
        .iter()
        .chain(&base.states)
        .filter(|r| r.flags.iter().any(|f| f.starts_with("capped:")))
        .map(|r| (r.unit_id.clone(), r.year))
        .collect();
    let states_capped: std::collections::BTreeSet<i32> =
        base.states.iter().filter(|r| capped_units.contains(&(r.unit_id.clone(), r.year))).map(|r| r.year).collect();
    let mut changed = 0;
    let mut stray = Vec::new();
    for (key, r) in rows(&uncapped) {
        let b = base_rows[&key];
        if b.causes != r.causes {
            changed += 1;
            let national = r.flags.iter().any(|f| f == "aggregated_from_states");
            let allowed = capped_units.contains(&(key.0.clone(), key.1)) || (national && states_capped.contains(&key.1));
            if !allowed {
                stray.push(format!("{} {} {}", key.0, key.1, key.2));
            }
        }
    }
    if !stray.is_empty() || capped_units.is_empty() {
        problems.push(format!(
            "no-cap changed {} in-range rows ({}), {} capped unit-years",
            stray.len(),
            stray.iter().take(5).cloned().collect::<Vec<_>>().join(", "),
            capped_units.len()
        ));
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "VR rows fixed under 0.65/0.85; global overall preterm {:.2}% < {:.2}% < {:.2}%; \
                 no-cap changed {changed} rows, all on {} capped unit-years",
                100.0 * p65,
                100.0 * p74,
                100.0 * p85,
                capped_units.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- ICD

fn criterion_10() -> Outcome {
    use Cause::*;
    let c = |cause| IcdMapping::Cause(cause);
    let cases: Vec<(&str, u8, IcdMapping)> = vec![
        ("P01.0", 10, c(Preterm)),
        ("P22.0", 10, c(Preterm)),
        ("P25.1", 10, c(Preterm)),
        ("P52.4", 10, c(Preterm)),
        ("P61.2", 10, c(Preterm)),
        ("P77", 10, c(Preterm)),
        ("P02.0", 10, c(Intrapartum)),
        ("P03.4", 10, c(Intrapartum)),
        ("P10.2", 10, c(Intrapartum)),
        ("P21.9", 10, c(Intrapartum)),
        ("P24.0", 10, c(Intrapartum)),
        ("P91.6", 10, c(Intrapartum)),
        ("Q24.9", 10, c(Congenital)),
        ("P35.0", 10, c(Congenital)),
        ("D56.1", 10, c(Congenital)),
        ("E84.0", 10, c(Congenital)),
        ("I42.0", 10, c(Congenital)),
        ("P36.9", 10, c(Sepsis)),
        ("A41.9", 10, c(Sepsis)),
        ("A33", 10, c(Sepsis)),
        ("G00.1", 10, c(Sepsis)),
        ("P23.9", 10, c(Pneumonia)),
        ("J18.9", 10, c(Pneumonia)),
        ("A37.0", 10, c(Pneumonia)),
        ("W79", 10, c(Injuries)),
        ("X59", 10, c(Injuries)),
        ("P29.1", 10, c(Other)),
        ("C92.0", 10, c(Other)),
        ("P01.5", 10, c(Other)),
        ("P55.1", 10, c(Other)),
        ("P83.2", 10, c(Other)),
        ("R95", 10, IcdMapping::Excluded),
        ("R99", 10, IcdMapping::Excluded),
        ("O60.1", 10, IcdMapping::Excluded),
        ("P92.1", 10, IcdMapping::Excluded),
        ("P96.8", 10, IcdMapping::Excluded),
        ("765.1", 9, c(Preterm)),
        ("767.0", 9, c(Intrapartum)),
        ("740", 9, c(Congenital)),
        ("771.8", 9, c(Sepsis)),
        ("780.6", 9, c(Sepsis)),
        ("486", 9, c(Pneumonia)),
        ("850", 9, c(Injuries)),
        ("760.1", 9, c(Other)),
        ("798.0", 9, IcdMapping::Excluded),
    ];
    let mut wrong = Vec::new();
    for (code, rev, expect) in &cases {
        let got = map_icd_code(code, IcdRevision::try_from(*rev).unwrap()).unwrap();
        if got != *expect {
            wrong.push(format!("{code}: {got:?}"));
        }
    }
    let conflict = map_icd_code("P07.3", IcdRevision::Icd10).unwrap();
    let conflict_reported = conflict
        == IcdMapping::Conflict(vec![IcdCategory::Cause(Preterm), IcdCategory::Cause(Intrapartum)]);
    let record = |code: &str, deaths| VrRecord {
        country: "A".into(),
        year: 2010,
        period: Period::Early,
        icd_revision: IcdRevision::Icd10,
        code: code.into(),
        deaths,
    };
    let records = [record("P22.0", 40), record("P07.3", 5)];
    let strict_rejects = build_vr_distribution(&records, ConflictPolicy::Reject).is_err();
    let lenient = build_vr_distribution(&records, ConflictPolicy::FirstListedRow).unwrap();
    let recorded = lenient.resolved_conflicts.len() == 1;
    outcome(
        wrong.is_empty() && conflict_reported && strict_rejects && recorded,
        format!(
            "{}/{} codes correct{}; P07 conflict reported: {conflict_reported}; rejected by default: {strict_rejects}; \
             recorded when resolved: {recorded}",
            cases.len() - wrong.len(),
            cases.len(),
            if wrong.is_empty() { String::new() } else { format!(" (wrong: {})", wrong.join(", ")) }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("global table overall column", Duration::from_secs(1), criterion_1),
        ("risk arithmetic", Duration::from_secs(1), criterion_2),
        ("published equation evaluation", Duration::from_secs(1), criterion_3),
        ("MLE against grid-search oracle", Duration::from_secs(10), criterion_4),
        ("analytic gradient", Duration::from_secs(10), criterion_5),
        ("bootstrap determinism and coverage", Duration::from_secs(1800), criterion_6),
        ("imputation", Duration::from_secs(1), criterion_7),
        ("covariate selection", Duration::from_secs(60), criterion_8),
        ("sensitivity modes", Duration::from_secs(300), criterion_9),
        ("ICD mapping", Duration::from_secs(1), criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = within(*limit, t, check());
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
