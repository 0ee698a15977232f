//! Aggregation stage and the published-table report shapes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::resample::{available_groupings, BootstrapArtifact, GroupInterval, BOOTSTRAP_FILE};
use super::stages::{causes_for, create_file, read_json, write_json, IngestArtifact, INGEST_FILE};
use crate::basis::quantile_sorted;
use crate::cause::{Cause, Period};
use crate::envelope::{
    aggregate, aggregate_india_states, compute_risk, membership_table, nmr_band, round_half_up, AllocationResult,
    Bounds, Grouping, NMR_BAND_LABELS,
};
use crate::error::{Error, Result};
use crate::ingest::load::CsvTable;

pub const AGGREGATE_FILE: &str = "aggregates.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub grouping: Grouping,
    pub result: AllocationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateArtifact {
    /// Country-level results: units that are not states, plus national
    /// results built from states.
    pub countries: Vec<AllocationResult>,
    /// State-level results feeding national aggregates.
    pub states: Vec<AllocationResult>,
    pub groups: Vec<GroupResult>,
}

impl AggregateArtifact {
    pub fn group(&self, grouping: Grouping, label: &str, year: i32, period: Period) -> Option<&AllocationResult> {
        self.groups
            .iter()
            .find(|g| {
                g.grouping == grouping && g.result.unit_id == label && g.result.year == year && g.result.period == period
            })
            .map(|g| &g.result)
    }
}

fn attach_group_intervals(
    r: &mut AllocationResult,
    grouping: Grouping,
    intervals: &BTreeMap<(Grouping, &str, i32, Period, Cause), Bounds>,
) -> Result<()> {
    let total = r.total_deaths();
    for c in &mut r.causes {
        if let Some(d) = intervals.get(&(grouping, r.unit_id.as_str(), r.year, r.period, c.cause)) {
            c.deaths_ci = Some(*d);
            c.fraction_ci = (total > 0.0).then(|| Bounds {
                lo: (d.lo / total).clamp(0.0, 1.0),
                hi: (d.hi / total).clamp(0.0, 1.0),
            });
            c.risk_ci = Some(Bounds {
                lo: compute_risk(d.lo, r.live_births)?,
                hi: compute_risk(d.hi, r.live_births)?,
            });
        }
    }
    Ok(())
}

pub fn aggregate_stage(cfg: &RunConfig, ing: &IngestArtifact, boot: &BootstrapArtifact) -> Result<AggregateArtifact> {
    let membership = membership_table(ing.membership.clone());
    let intervals: BTreeMap<(Grouping, &str, i32, Period, Cause), Bounds> = boot
        .groups
        .iter()
        .map(|g: &GroupInterval| ((g.grouping, g.label.as_str(), g.year, g.period, g.cause), g.deaths))
        .collect();

    let is_state = |unit: &str| membership.get(unit).is_some_and(|m| m.india_state_of.is_some());
    let (states, mut countries): (Vec<AllocationResult>, Vec<AllocationResult>) =
        boot.results.iter().cloned().partition(|r| is_state(&r.unit_id));

    let nationals: BTreeSet<&str> = membership
        .values()
        .filter_map(|m| m.india_state_of.as_deref())
        .collect();
    for national in &nationals {
        if countries.iter().any(|r| r.unit_id == *national) {
            return Err(Error::validation(format!(
                "{national} is estimated directly and also built from its states"
            )));
        }
        let members: Vec<AllocationResult> = states
            .iter()
            .filter(|r| membership[&r.unit_id].india_state_of.as_deref() == Some(national))
            .cloned()
            .collect();
        for mut r in aggregate_india_states(&members, &ing.envelopes, national)? {
            attach_group_intervals(&mut r, Grouping::IndiaNational, &intervals)?;
            r.flags.push("aggregated_from_states".into());
            countries.push(r);
        }
    }
    countries.sort_by(|a, b| (&a.unit_id, a.year, a.period).cmp(&(&b.unit_id, b.year, b.period)));

    let mut groups = Vec::new();
    for grouping in available_groupings(&membership) {
        if grouping == Grouping::IndiaNational {
            continue;
        }
        for mut r in aggregate(&boot.results, grouping, &membership)? {
            attach_group_intervals(&mut r, grouping, &intervals)?;
            groups.push(GroupResult { grouping, result: r });
        }
    }
    let _ = cfg;
    Ok(AggregateArtifact {
        countries,
        states,
        groups,
    })
}

pub fn run_aggregate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ing: IngestArtifact = read_json(dir, INGEST_FILE)?;
    let boot: BootstrapArtifact = read_json(dir, BOOTSTRAP_FILE)?;
    write_json(dir, AGGREGATE_FILE, &aggregate_stage(cfg, &ing, &boot)?)
}

// ---------------------------------------------------------------- reports

/// Report shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportShape {
    /// Global proportions, deaths (thousands) and risk by period.
    GlobalSummary,
    /// Median country proportions and pooled risk by NMR band.
    NmrBands,
    /// Per-country prop / risk / num rows by period.
    CountryDetail,
    /// This run's overall proportions next to alternative estimates.
    SourceComparison,
}

impl ReportShape {
    pub const ALL: [ReportShape; 4] = [
        ReportShape::GlobalSummary,
        ReportShape::NmrBands,
        ReportShape::CountryDetail,
        ReportShape::SourceComparison,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReportShape::GlobalSummary => "global_summary",
            ReportShape::NmrBands => "nmr_bands",
            ReportShape::CountryDetail => "country_detail",
            ReportShape::SourceComparison => "source_comparison",
        }
    }
}

impl FromStr for ReportShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReportShape::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown report shape '{s}'")))
    }
}

/// Fixed-point text after half-up rounding.
pub fn fmt_round(x: f64, decimals: usize) -> String {
    let v = round_half_up(x, decimals as i32);
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.decimals$}")
}

fn fmt_with_ci(x: f64, ci: Option<Bounds>, decimals: usize) -> String {
    match ci {
        Some(b) => format!(
            "{} ({}-{})",
            fmt_round(x, decimals),
            fmt_round(b.lo, decimals),
            fmt_round(b.hi, decimals)
        ),
        None => fmt_round(x, decimals),
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn csv_err(file: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        file: file.to_string(),
        source,
    }
}

/// Causes shown in the global table: injuries are folded into other.
const SUMMARY_CAUSES: [Cause; 8] = [
    Cause::Preterm,
    Cause::Intrapartum,
    Cause::Congenital,
    Cause::Sepsis,
    Cause::Pneumonia,
    Cause::Diarrhoea,
    Cause::Tetanus,
    Cause::Other,
];

/// Deaths and bounds of `cause` with injuries added into other.
fn summary_cell(r: &AllocationResult, cause: Cause) -> (f64, Option<Bounds>) {
    let pick = |c: Cause| r.cause(c).map(|e| (e.deaths, e.deaths_ci));
    let (d, ci) = pick(cause).unwrap_or((0.0, None));
    if cause != Cause::Other {
        return (d, ci);
    }
    match pick(Cause::Injuries) {
        None => (d, ci),
        Some((di, cii)) => (
            d + di,
            ci.zip(cii).map(|(a, b)| Bounds {
                lo: a.lo + b.lo,
                hi: a.hi + b.hi,
            }),
        ),
    }
}

/// Global table for one year: % and deaths in thousands (with uncertainty)
/// per period, and overall risk.
pub fn write_global_summary<W: Write>(agg: &AggregateArtifact, year: i32, w: W) -> Result<()> {
    let err = csv_err("global_summary");
    let mut out = csv_writer(w);
    out.write_record([
        "cause",
        "early_pct",
        "early_deaths_thousands",
        "late_pct",
        "late_deaths_thousands",
        "overall_pct",
        "overall_deaths_thousands",
        "overall_risk",
    ])
    .map_err(&err)?;
    let periods: Vec<Option<&AllocationResult>> = [Period::Early, Period::Late, Period::Overall]
        .into_iter()
        .map(|p| agg.group(Grouping::Global, "global", year, p))
        .collect();
    if periods.iter().all(Option::is_none) {
        out.flush().map_err(|e| Error::io("global_summary", e))?;
        return Ok(());
    }
    let mut missing = Vec::new();
    for (p, r) in [Period::Early, Period::Late, Period::Overall].iter().zip(&periods) {
        if r.is_none() {
            missing.push(format!("global {year} {p}"));
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingData(format!("global_summary lacks: {}", missing.join(", "))));
    }
    for cause in SUMMARY_CAUSES {
        let mut row = vec![cause.label().to_string()];
        for r in periods.iter().flatten() {
            let (d, ci) = summary_cell(r, cause);
            let total = r.total_deaths();
            let pct = if total > 0.0 { 100.0 * d / total } else { 0.0 };
            let thousands = ci.map(|b| Bounds {
                lo: b.lo / 1000.0,
                hi: b.hi / 1000.0,
            });
            row.push(fmt_round(pct, 1));
            row.push(fmt_with_ci(d / 1000.0, thousands, 1));
            if r.period == Period::Overall {
                row.push(fmt_round(compute_risk(d, r.live_births)?, 1));
            }
        }
        out.write_record(&row).map_err(&err)?;
    }
    out.flush().map_err(|e| Error::io("global_summary", e))
}

/// NMR-band table: median (IQR) of country proportions and the pooled risk
/// (with uncertainty) per band, for each period.
pub fn write_nmr_bands<W: Write>(agg: &AggregateArtifact, year: i32, w: W) -> Result<()> {
    let err = csv_err("nmr_bands");
    let mut out = csv_writer(w);
    let mut header = vec!["period".to_string(), "cause".to_string()];
    header.extend(NMR_BAND_LABELS.iter().map(|b| format!("median_prop {b}")));
    header.extend(NMR_BAND_LABELS.iter().map(|b| format!("risk {b}")));
    out.write_record(&header).map_err(&err)?;

    let overall: BTreeMap<&str, f64> = agg
        .countries
        .iter()
        .filter(|r| r.year == year && r.period == Period::Overall)
        .map(|r| (r.unit_id.as_str(), r.nmr()))
        .collect();
    let causes: Vec<Cause> = Cause::ALL
        .iter()
        .copied()
        .filter(|c| agg.countries.iter().any(|r| r.cause(*c).is_some()))
        .collect();
    for period in [Period::Early, Period::Late, Period::Overall] {
        let members: Vec<&AllocationResult> = agg
            .countries
            .iter()
            .filter(|r| r.year == year && r.period == period)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut rows: Vec<Vec<String>> = Vec::new();
        for &cause in &causes {
            let mut row = vec![period.label().to_string(), cause.label().to_string()];
            for band in NMR_BAND_LABELS {
                let mut v: Vec<f64> = members
                    .iter()
                    .filter(|r| nmr_band(overall[r.unit_id.as_str()]) == band)
                    .filter_map(|r| r.cause(cause).map(|c| c.fraction))
                    .collect();
                v.sort_by(f64::total_cmp);
                row.push(if v.is_empty() {
                    "---".into()
                } else {
                    format!(
                        "{} ({}-{})",
                        fmt_round(quantile_sorted(&v, 0.5), 2),
                        fmt_round(quantile_sorted(&v, 0.25), 2),
                        fmt_round(quantile_sorted(&v, 0.75), 2)
                    )
                });
            }
            for band in NMR_BAND_LABELS {
                row.push(match agg.group(Grouping::NmrBand, band, year, period).and_then(|g| g.cause(cause)) {
                    Some(c) => fmt_with_ci(c.risk, c.risk_ci, 1),
                    None => "---".into(),
                });
            }
            rows.push(row);
        }
        let mut total = vec![period.label().to_string(), "Total".to_string()];
        total.extend(NMR_BAND_LABELS.iter().map(|_| "---".to_string()));
        for band in NMR_BAND_LABELS {
            total.push(match agg.group(Grouping::NmrBand, band, year, period) {
                Some(g) => fmt_round(1000.0 * g.total_deaths() / g.live_births, 1),
                None => "---".into(),
            });
        }
        rows.push(total);
        for r in rows {
            out.write_record(&r).map_err(&err)?;
        }
    }
    out.flush().map_err(|e| Error::io("nmr_bands", e))
}

const DETAIL_CAUSES: [Cause; 9] = [
    Cause::Preterm,
    Cause::Intrapartum,
    Cause::Congenital,
    Cause::Sepsis,
    Cause::Pneumonia,
    Cause::Tetanus,
    Cause::Diarrhoea,
    Cause::Injuries,
    Cause::Other,
];

/// Country table: prop, risk and num (deaths in hundreds, with uncertainty)
/// rows for each period. Causes a unit's method does not estimate show
/// `---`.
pub fn write_country_detail<W: Write>(agg: &AggregateArtifact, year: i32, w: W) -> Result<()> {
    let err = csv_err("country_detail");
    let mut out = csv_writer(w);
    let mut header = vec!["country".to_string(), "period".into(), "stat".into()];
    header.extend(DETAIL_CAUSES.iter().map(|c| c.label().to_string()));
    header.push("Total".into());
    out.write_record(&header).map_err(&err)?;
    for r in agg.countries.iter().filter(|r| r.year == year) {
        let label = match r.method {
            Some(m) => format!("{} ({m})", r.unit_id),
            None => r.unit_id.clone(),
        };
        let estimated: BTreeSet<Cause> = r
            .method
            .map(causes_for)
            .unwrap_or_else(|| r.causes.iter().map(|c| c.cause).collect())
            .into_iter()
            .collect();
        let mut rows = [
            vec![label, r.period.label().to_string(), "prop".into()],
            vec![String::new(), String::new(), "risk".into()],
            vec![String::new(), String::new(), "num".into()],
        ];
        for cause in DETAIL_CAUSES {
            match r.cause(cause).filter(|_| estimated.contains(&cause)) {
                Some(c) => {
                    rows[0].push(fmt_round(c.fraction, 2));
                    rows[1].push(fmt_round(c.risk, 1));
                    let hundreds = c.deaths_ci.map(|b| Bounds {
                        lo: b.lo / 100.0,
                        hi: b.hi / 100.0,
                    });
                    rows[2].push(fmt_with_ci(c.deaths / 100.0, hundreds, 1));
                }
                None => {
                    for row in &mut rows {
                        row.push("---".into());
                    }
                }
            }
        }
        rows[0].push(fmt_round(1.0, 0));
        rows[1].push(fmt_round(1000.0 * r.total_deaths() / r.live_births, 1));
        rows[2].push(fmt_round(r.total_deaths() / 100.0, 1));
        for row in rows {
            out.write_record(&row).map_err(&err)?;
        }
    }
    out.flush().map_err(|e| Error::io("country_detail", e))
}

/// One alternative estimate: `source, unit_id, year, cause, fraction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub source: String,
    pub unit_id: String,
    pub year: i32,
    pub cause: Cause,
    pub fraction: f64,
}

pub fn load_comparison(path: &Path) -> Result<Vec<ComparisonRow>> {
    let table = CsvTable::from_path(path)?;
    table.require_columns(&["source", "unit_id", "year", "cause", "fraction"])?;
    let mut out = Vec::new();
    for row in table.rows() {
        let fraction = row.finite("fraction")?;
        if !(0.0..=1.0).contains(&fraction) {
            return Err(row.error("fraction", "must lie in [0, 1]"));
        }
        out.push(ComparisonRow {
            source: row.text("source")?,
            unit_id: row.text("unit_id")?,
            year: row.parse("year")?,
            cause: row.parse("cause")?,
            fraction,
        });
    }
    Ok(out)
}

/// Overall-period proportions of the compared units from this run, followed
/// by the alternative estimates, in long form.
pub fn write_source_comparison<W: Write>(agg: &AggregateArtifact, comparison: &[ComparisonRow], w: W) -> Result<()> {
    let err = csv_err("source_comparison");
    let mut out = csv_writer(w);
    out.write_record(["unit_id", "year", "source", "cause", "fraction"]).map_err(&err)?;
    let units: BTreeSet<&str> = comparison.iter().map(|c| c.unit_id.as_str()).collect();
    let mut missing = Vec::new();
    for unit in &units {
        let years: BTreeSet<i32> = comparison.iter().filter(|c| c.unit_id == *unit).map(|c| c.year).collect();
        for year in years {
            let Some(r) = agg
                .countries
                .iter()
                .find(|r| r.unit_id == *unit && r.year == year && r.period == Period::Overall)
            else {
                missing.push(format!("{unit} {year}"));
                continue;
            };
            for c in &r.causes {
                out.write_record([*unit, &year.to_string(), "this_run", c.cause.as_str(), &fmt_round(c.fraction, 3)])
                    .map_err(&err)?;
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingData(format!(
            "comparison units without results: {}",
            missing.join(", ")
        )));
    }
    for c in comparison {
        out.write_record([&c.unit_id, &c.year.to_string(), &c.source, c.cause.as_str(), &fmt_round(c.fraction, 3)])
            .map_err(&err)?;
    }
    out.flush().map_err(|e| Error::io("source_comparison", e))
}

fn opt_bound(b: Option<Bounds>, lo: bool) -> String {
    b.map_or(String::new(), |b| if lo { b.lo } else { b.hi }.to_string())
}

/// Machine-readable results at full precision.
pub fn write_results_csv<W: Write>(results: &[AllocationResult], w: W) -> Result<()> {
    let err = csv_err("results");
    let mut out = csv_writer(w);
    out.write_record([
        "unit_id",
        "year",
        "period",
        "cause",
        "fraction",
        "fraction_lo",
        "fraction_hi",
        "deaths",
        "deaths_lo",
        "deaths_hi",
        "risk",
        "risk_lo",
        "risk_hi",
    ])
    .map_err(&err)?;
    for r in results {
        for c in &r.causes {
            out.write_record([
                r.unit_id.clone(),
                r.year.to_string(),
                r.period.as_str().to_string(),
                c.cause.as_str().to_string(),
                c.fraction.to_string(),
                opt_bound(c.fraction_ci, true),
                opt_bound(c.fraction_ci, false),
                c.deaths.to_string(),
                opt_bound(c.deaths_ci, true),
                opt_bound(c.deaths_ci, false),
                c.risk.to_string(),
                opt_bound(c.risk_ci, true),
                opt_bound(c.risk_ci, false),
            ])
            .map_err(&err)?;
        }
    }
    out.flush().map_err(|e| Error::io("results", e))
}

/// The report year: configured, or the last year with results.
pub fn report_year(cfg: &RunConfig, agg: &AggregateArtifact) -> Result<i32> {
    cfg.report_year
        .or_else(|| agg.countries.iter().map(|r| r.year).max())
        .ok_or_else(|| Error::MissingData("no results to report".into()))
}

pub fn run_report(cfg: &RunConfig, dir: &Path) -> Result<()> {
    run_report_shapes(cfg, dir, &ReportShape::ALL)
}

/// Writes `results.csv`, `aggregates.csv` and the requested table shapes.
/// The comparison shape is skipped when no comparison file is configured.
pub fn run_report_shapes(cfg: &RunConfig, dir: &Path, shapes: &[ReportShape]) -> Result<()> {
    let agg: AggregateArtifact = read_json(dir, AGGREGATE_FILE)?;
    let year = report_year(cfg, &agg)?;
    write_results_csv(&agg.countries, create_file(&dir.join("results.csv"))?)?;
    let groups: Vec<AllocationResult> = agg
        .groups
        .iter()
        .map(|g| {
            let mut r = g.result.clone();
            r.unit_id = format!("{}:{}", g.grouping, r.unit_id);
            r
        })
        .collect();
    write_results_csv(&groups, create_file(&dir.join("aggregates.csv"))?)?;
    for &shape in shapes {
        let path = dir.join(format!("{}.csv", shape.as_str()));
        match shape {
            ReportShape::GlobalSummary => write_global_summary(&agg, year, create_file(&path)?)?,
            ReportShape::NmrBands => write_nmr_bands(&agg, year, create_file(&path)?)?,
            ReportShape::CountryDetail => write_country_detail(&agg, year, create_file(&path)?)?,
            ReportShape::SourceComparison => {
                if let Some(input) = &cfg.inputs.comparison {
                    let rows = load_comparison(input)?;
                    write_source_comparison(&agg, &rows, create_file(&path)?)?;
                }
            }
        }
    }
    Ok(())
}
