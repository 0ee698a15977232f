//! Synthetic input set for trying the pipeline end to end.
//!
//! Cause mixes are drawn from known log-ratio models whose intercepts give
//! early and late mixes close to recent global estimates, with the neonatal
//! mortality rate shifting the mix. The data deliberately include VR gaps,
//! an overlapping ICD code, excluded codes, studies with unreported causes,
//! a covariate outside the training range and state-level units that roll up
//! to a national total.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cause::{Cause, Period};
use crate::error::{Error, Result};

pub const YEARS: std::ops::RangeInclusive<i32> = 2008..=2012;

/// Early and late global mixes (percent) over preterm, intrapartum,
/// congenital, sepsis, pneumonia, diarrhoea, tetanus, other.
const EARLY_MIX: [f64; 8] = [40.8, 27.0, 10.6, 8.0, 4.8, 0.3, 1.0, 7.3];
const LATE_MIX: [f64; 8] = [21.2, 12.9, 10.2, 37.2, 5.2, 1.4, 3.8, 8.1];
const MIX_CAUSES: [Cause; 8] = [
    Cause::Preterm,
    Cause::Intrapartum,
    Cause::Congenital,
    Cause::Sepsis,
    Cause::Pneumonia,
    Cause::Diarrhoea,
    Cause::Tetanus,
    Cause::Other,
];

/// Change in log-ratio (against intrapartum) per unit of standardised NMR.
fn nmr_slope(cause: Cause) -> f64 {
    match cause {
        Cause::Preterm => -0.35,
        Cause::Congenital => -0.4,
        Cause::Sepsis => 0.45,
        Cause::Pneumonia => 0.3,
        Cause::Diarrhoea => 0.5,
        Cause::Tetanus => 0.7,
        Cause::Injuries => -0.2,
        Cause::Intrapartum | Cause::Other => 0.0,
    }
}

/// True cause distribution for a setting with the given NMR. Injuries, when
/// requested, take 1.5% of deaths off other before the NMR effect.
fn true_mix(period: Period, nmr: f64, causes: &[Cause]) -> Vec<(Cause, f64)> {
    let mix = if period == Period::Early { &EARLY_MIX } else { &LATE_MIX };
    let base = |c: Cause| -> f64 {
        match c {
            Cause::Injuries => 1.5,
            Cause::Other if causes.contains(&Cause::Injuries) => mix[7] - 1.5,
            _ => mix[MIX_CAUSES.iter().position(|m| *m == c).expect("mix cause")],
        }
    };
    let z = (nmr - 15.0) / 10.0;
    let w: Vec<f64> = causes
        .iter()
        .map(|&c| (base(c) / base(Cause::Intrapartum)).ln() + nmr_slope(c) * z)
        .map(f64::exp)
        .collect();
    let total: f64 = w.iter().sum();
    causes.iter().zip(w).map(|(&c, w)| (c, w / total)).collect()
}

fn draw_counts(rng: &mut ChaCha8Rng, mix: &[(Cause, f64)], n: u64) -> Vec<(Cause, u64)> {
    let mut counts: Vec<(Cause, u64)> = mix.iter().map(|&(c, _)| (c, 0)).collect();
    for _ in 0..n {
        let mut u: f64 = rng.random();
        let mut k = mix.len() - 1;
        for (i, &(_, p)) in mix.iter().enumerate() {
            if u < p {
                k = i;
                break;
            }
            u -= p;
        }
        counts[k].1 += 1;
    }
    counts
}

fn icd_code(cause: Cause) -> &'static str {
    match cause {
        Cause::Preterm => "P22.0",
        Cause::Intrapartum => "P21.9",
        Cause::Congenital => "Q24.9",
        Cause::Sepsis => "P36.9",
        Cause::Pneumonia => "P23.9",
        Cause::Injuries => "W79",
        Cause::Diarrhoea => "A09",
        Cause::Tetanus => "A33",
        Cause::Other => "P29.1",
    }
}

struct Unit {
    id: String,
    method: &'static str,
    region: &'static str,
    income: &'static str,
    state_of: Option<&'static str>,
    nmr: f64,
    births: f64,
    gni: f64,
    dpt: f64,
    femlit: f64,
    lbw: f64,
    gfr: f64,
}

impl Unit {
    fn nmr_in(&self, year: i32) -> f64 {
        self.nmr * (1.0 - 0.03 * f64::from(year - 2008))
    }
}

fn make_units(rng: &mut ChaCha8Rng) -> Vec<Unit> {
    let mut units = Vec::new();
    let mut push = |rng: &mut ChaCha8Rng, id: String, method, region, income, state_of, nmr: f64| {
        let t = ((nmr - 2.0) / 40.0).clamp(0.0, 1.0);
        units.push(Unit {
            id,
            method,
            region,
            income,
            state_of,
            nmr,
            births: rng.random_range(80_000.0..2_000_000.0f64).round(),
            gni: (45_000.0 * (1.0 - t).powi(3) + 400.0) * rng.random_range(0.8..1.2),
            dpt: (99.0 - 40.0 * t + rng.random_range(-3.0..3.0f64)).min(99.0),
            femlit: (99.0 - 55.0 * t + rng.random_range(-4.0..4.0f64)).min(100.0),
            lbw: 5.0 + 20.0 * t + rng.random_range(-1.5..1.5),
            gfr: 0.05 + 0.15 * t + rng.random_range(-0.01..0.01),
        });
    };
    for i in 0..16 {
        let nmr = 2.0 + 10.0 * f64::from(i) / 15.0 + rng.random_range(-0.3..0.3);
        let (region, income) = if i < 10 { ("Developed", "High") } else { ("Latin America", "Upper middle") };
        push(rng, format!("V{:02}", i + 1), "vr", region, income, None, nmr);
    }
    for i in 0..10 {
        let nmr = 5.0 + 11.0 * f64::from(i) / 9.0 + rng.random_range(-0.3..0.3);
        push(rng, format!("L{:02}", i + 1), "low_mortality_model", "Latin America", "Upper middle", None, nmr);
    }
    for i in 0..16 {
        let nmr = 18.0 + 26.0 * f64::from(i) / 15.0 + rng.random_range(-0.5..0.5);
        let (region, income) = if i % 2 == 0 { ("Sub-Saharan Africa", "Low") } else { ("Southern Asia", "Lower middle") };
        push(rng, format!("H{:02}", i + 1), "high_mortality_model", region, income, None, nmr);
    }
    for i in 0..5 {
        let nmr = 20.0 + 5.0 * f64::from(i) + rng.random_range(-0.5..0.5);
        push(
            rng,
            format!("IN{:02}", i + 1),
            "high_mortality_model",
            "Southern Asia",
            "Lower middle",
            Some("IND"),
            nmr,
        );
    }
    // One middle-income modelled country far richer than any VR country.
    units[18].gni = 90_000.0;
    units
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    let path = dir.join(name);
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_fail(name: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        file: name.to_string(),
        source,
    }
}

fn flush(w: &mut csv::Writer<fs::File>, name: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(name, e))
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

const CONFIG: &str = r#"report_year = 2012

[inputs]
observations = "observations.csv"
vr = "vr.csv"
covariates = "covariates.csv"
groups = "groups.csv"
envelopes = "envelopes.csv"
membership = "membership.csv"
comparison = "comparison.csv"

[bootstrap]
replicates = 200
seed = 20130101

[candidates]
low_mortality = ["NMR", "GNI", "DPT", "femlit"]
high_mortality = ["NMR", "LBW", "DPT", "GFR"]
"#;

/// Writes a complete demo input set and `config.toml` into `dir`.
pub fn generate_demo(dir: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units = make_units(&mut rng);

    let name = "groups.csv";
    let mut w = writer(dir, name)?;
    w.write_record(["country", "method"]).map_err(csv_fail(name))?;
    for u in &units {
        w.write_record([u.id.as_str(), u.method]).map_err(csv_fail(name))?;
    }
    flush(&mut w, name)?;

    let name = "membership.csv";
    let mut w = writer(dir, name)?;
    w.write_record(["unit_id", "mdg_region", "income_group", "india_state_of"])
        .map_err(csv_fail(name))?;
    for u in &units {
        w.write_record([u.id.as_str(), u.region, u.income, u.state_of.unwrap_or("")])
            .map_err(csv_fail(name))?;
    }
    flush(&mut w, name)?;

    let name = "envelopes.csv";
    let mut w = writer(dir, name)?;
    w.write_record(["unit_id", "year", "neonatal_deaths", "live_births", "observed_early_share"])
        .map_err(csv_fail(name))?;
    for (i, u) in units.iter().enumerate() {
        for year in YEARS {
            let births = (u.births * (1.0 + 0.01 * f64::from(year - 2008))).round();
            let deaths = (u.nmr_in(year) * births / 1000.0).round();
            let share = (u.method == "vr" && i % 2 == 0).then(|| format!("{:.3}", 0.72 + 0.005 * (i % 10) as f64));
            w.write_record([
                u.id.clone(),
                year.to_string(),
                deaths.to_string(),
                births.to_string(),
                share.unwrap_or_default(),
            ])
            .map_err(csv_fail(name))?;
        }
    }
    flush(&mut w, name)?;

    let name = "covariates.csv";
    let mut w = writer(dir, name)?;
    w.write_record(["unit_id", "year", "covariate", "value"]).map_err(csv_fail(name))?;
    for (i, u) in units.iter().enumerate() {
        for year in YEARS {
            let drift = f64::from(year - 2008);
            let values = [
                ("NMR", u.nmr_in(year)),
                ("GNI", u.gni * (1.0 + 0.02 * drift)),
                ("DPT", (u.dpt + 0.5 * drift).min(99.0)),
                ("femlit", (u.femlit + 0.3 * drift).min(100.0)),
                ("LBW", u.lbw),
                ("GFR", u.gfr),
            ];
            for (cov, v) in values {
                // A hole for imputation to fill.
                if i == 4 && cov == "femlit" && year == 2010 {
                    continue;
                }
                w.write_record([u.id.as_str(), &year.to_string(), cov, &fmt6(v)])
                    .map_err(csv_fail(name))?;
            }
        }
    }
    flush(&mut w, name)?;

    write_vr(dir, &mut rng, &units)?;
    write_studies(dir, &mut rng, &units)?;
    write_comparison(dir, &units)?;

    let path = dir.join("config.toml");
    fs::write(&path, CONFIG).map_err(|e| Error::io(&path, e))
}

fn write_vr(dir: &Path, rng: &mut ChaCha8Rng, units: &[Unit]) -> Result<()> {
    let name = "vr.csv";
    let mut w = writer(dir, name)?;
    w.write_record(["country", "year", "period", "icd_revision", "code", "deaths"])
        .map_err(csv_fail(name))?;
    let causes = [
        Cause::Preterm,
        Cause::Intrapartum,
        Cause::Congenital,
        Cause::Sepsis,
        Cause::Pneumonia,
        Cause::Injuries,
        Cause::Other,
    ];
    for (i, u) in units.iter().enumerate().filter(|(_, u)| u.method == "vr") {
        for year in YEARS {
            // Gaps: an interior year, and a country reporting only early on.
            if (i == 1 && year == 2010) || (i == 2 && year > 2009) {
                continue;
            }
            for period in [Period::Early, Period::Late] {
                let mix = true_mix(period, u.nmr_in(year), &causes);
                let n = if period == Period::Early {
                    rng.random_range(400..2500)
                } else {
                    rng.random_range(150..900)
                };
                for (cause, count) in draw_counts(rng, &mix, n) {
                    if count > 0 {
                        w.write_record([&u.id, &year.to_string(), period.as_str(), "10", icd_code(cause), &count.to_string()])
                            .map_err(csv_fail(name))?;
                    }
                }
                // Ill-defined deaths, which are excluded.
                w.write_record([&u.id, &year.to_string(), period.as_str(), "10", "R95", &rng.random_range(1..30u32).to_string()])
                    .map_err(csv_fail(name))?;
                // A code listed under two categories.
                if i == 0 && period == Period::Early {
                    w.write_record([&u.id, &year.to_string(), period.as_str(), "10", "P07.3", "12"])
                        .map_err(csv_fail(name))?;
                }
            }
        }
    }
    flush(&mut w, name)
}

fn write_studies(dir: &Path, rng: &mut ChaCha8Rng, units: &[Unit]) -> Result<()> {
    let name = "observations.csv";
    let mut w = writer(dir, name)?;
    let mut header = vec!["unit_id", "year", "period", "source", "total_deaths"];
    header.extend(MIX_CAUSES.iter().map(|c| c.as_str()));
    w.write_record(&header).map_err(csv_fail(name))?;
    let hm: Vec<&Unit> = units.iter().filter(|u| u.method == "high_mortality_model").collect();
    for s in 0..48usize {
        let u = hm[s % hm.len()];
        let year = 2008 + (s % 5) as i32;
        let period = [Period::Early, Period::Late, Period::Overall][s % 3];
        let nmr = u.nmr_in(year);
        let mix = match period {
            Period::Overall => {
                let e = true_mix(Period::Early, nmr, &MIX_CAUSES);
                let l = true_mix(Period::Late, nmr, &MIX_CAUSES);
                e.iter().zip(&l).map(|(a, b)| (a.0, 0.74 * a.1 + 0.26 * b.1)).collect()
            }
            p => true_mix(p, nmr, &MIX_CAUSES),
        };
        let n = rng.random_range(150..900u64);
        let mut counts: Vec<(Cause, Option<u64>)> =
            draw_counts(rng, &mix, n).into_iter().map(|(c, k)| (c, Some(k))).collect();
        // Some studies do not separate the minor infections, and a few
        // not even pneumonia; their deaths sit in sepsis.
        let unreported: &[Cause] = match s % 8 {
            1 | 5 => &[Cause::Diarrhoea, Cause::Tetanus],
            3 => &[Cause::Pneumonia, Cause::Diarrhoea, Cause::Tetanus],
            _ => &[],
        };
        let moved: u64 = counts
            .iter_mut()
            .filter(|(c, _)| unreported.contains(c))
            .map(|(_, k)| k.take().unwrap_or(0))
            .sum();
        for (c, k) in &mut counts {
            if *c == Cause::Sepsis {
                *k = k.map(|k| k + moved);
            }
        }
        let mut row = vec![
            u.id.clone(),
            year.to_string(),
            period.as_str().to_string(),
            format!("study{:02}", s + 1),
            n.to_string(),
        ];
        row.extend(counts.iter().map(|(_, k)| k.map_or(String::new(), |k| k.to_string())));
        w.write_record(&row).map_err(csv_fail(name))?;
    }
    flush(&mut w, name)
}

/// Alternative overall estimates for three modelled countries: the true
/// mixes, rounded, as another method might report them.
fn write_comparison(dir: &Path, units: &[Unit]) -> Result<()> {
    let name = "comparison.csv";
    let mut w = writer(dir, name)?;
    w.write_record(["source", "unit_id", "year", "cause", "fraction"])
        .map_err(csv_fail(name))?;
    for u in units.iter().filter(|u| ["L02", "H03", "H10"].contains(&u.id.as_str())) {
        let year = *YEARS.end();
        let nmr = u.nmr_in(year);
        let causes: Vec<Cause> = if u.method == "low_mortality_model" {
            vec![
                Cause::Preterm,
                Cause::Intrapartum,
                Cause::Congenital,
                Cause::Sepsis,
                Cause::Pneumonia,
                Cause::Injuries,
                Cause::Other,
            ]
        } else {
            MIX_CAUSES.to_vec()
        };
        let e = true_mix(Period::Early, nmr, &causes);
        let l = true_mix(Period::Late, nmr, &causes);
        for (a, b) in e.iter().zip(&l) {
            let f = 0.74 * a.1 + 0.26 * b.1;
            w.write_record(["true_mix", &u.id, &year.to_string(), a.0.as_str(), &format!("{f:.4}")])
                .map_err(csv_fail(name))?;
        }
    }
    flush(&mut w, name)
}
