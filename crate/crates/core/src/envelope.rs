//! Envelope splitting, allocation of cause fractions into deaths and risks,
//! and aggregation across units.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cause::{Cause, CauseDistribution, Period};
use crate::error::{Error, Result};
use crate::ingest::EstimationMethod;

pub const DEFAULT_EARLY_SHARE: f64 = 0.74;

/// Units of the death and birth columns of an envelope file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeUnits {
    #[default]
    Counts,
    Hundreds,
    Thousands,
}

impl EnvelopeUnits {
    pub fn multiplier(self) -> f64 {
        match self {
            EnvelopeUnits::Counts => 1.0,
            EnvelopeUnits::Hundreds => 100.0,
            EnvelopeUnits::Thousands => 1000.0,
        }
    }
}

impl FromStr for EnvelopeUnits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "counts" => Ok(EnvelopeUnits::Counts),
            "hundreds" => Ok(EnvelopeUnits::Hundreds),
            "thousands" => Ok(EnvelopeUnits::Thousands),
            other => Err(Error::validation(format!(
                "unknown envelope units '{other}' (expected counts, hundreds or thousands)"
            ))),
        }
    }
}

/// All-cause neonatal deaths and live births for one unit-year, in counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRecord {
    pub unit_id: String,
    pub year: i32,
    pub neonatal_deaths: f64,
    pub live_births: f64,
    pub observed_early_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub unit_id: String,
    pub mdg_region: Option<String>,
    pub income_group: Option<String>,
    /// National unit this row is a state of, if any.
    pub india_state_of: Option<String>,
}

/// Splits a neonatal envelope into early and late parts whose sum is
/// exactly `total`: the larger part is computed by multiplication and the
/// smaller one as the exact remainder.
pub fn split_envelope(total: f64, early_share: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&early_share) {
        return Err(Error::validation(format!("early share {early_share} outside [0, 1]")));
    }
    if !(total >= 0.0) || !total.is_finite() {
        return Err(Error::validation(format!("envelope {total} must be finite and nonnegative")));
    }
    if early_share >= 0.5 {
        let early = early_share * total;
        Ok((early, total - early))
    } else {
        let late = (1.0 - early_share) * total;
        Ok((total - late, late))
    }
}

fn sequential_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |a, b| a + b)
}

/// Multiplies fractions by the envelope. The last cause takes the rounding
/// residual so the left-to-right sum equals `envelope` exactly; when that
/// alone cannot hit the total, an earlier share moves by a few ulps.
pub fn allocate_deaths(fractions: &CauseDistribution, envelope: f64) -> Result<Vec<(Cause, f64)>> {
    if !(envelope >= 0.0) || !envelope.is_finite() {
        return Err(Error::validation(format!("envelope {envelope} must be finite and nonnegative")));
    }
    let mut deaths: Vec<(Cause, f64)> = fractions.iter().map(|(c, f)| (c, f * envelope)).collect();
    let sum = |d: &[(Cause, f64)]| sequential_sum(d.iter().map(|x| x.1));
    if envelope == 0.0 || sum(&deaths) == envelope {
        return Ok(deaths);
    }
    let last = deaths.len() - 1;
    let mut movable: Vec<Option<usize>> = vec![None];
    let mut earlier: Vec<usize> = (0..last).filter(|&i| deaths[i].1 > 0.0).collect();
    earlier.sort_by(|&a, &b| deaths[b].1.total_cmp(&deaths[a].1));
    movable.extend(earlier.into_iter().map(Some));
    let base = deaths.clone();
    for j in movable {
        for shift in [0i32, 1, -1, 2, -2, 3, -3, 4, -4] {
            if j.is_none() && shift != 0 {
                continue;
            }
            let mut trial = base.clone();
            if let Some(j) = j {
                trial[j].1 = step_ulps(trial[j].1, shift);
            }
            let prefix = sequential_sum(trial[..last].iter().map(|d| d.1));
            let rest = (envelope - prefix).max(0.0);
            for m in [0i32, 1, -1, 2, -2] {
                trial[last].1 = step_ulps(rest, m).max(0.0);
                if sum(&trial) == envelope {
                    return Ok(trial);
                }
            }
        }
    }
    deaths[last].1 = (envelope - sequential_sum(deaths[..last].iter().map(|d| d.1))).max(0.0);
    Ok(deaths)
}

fn step_ulps(mut x: f64, n: i32) -> f64 {
    for _ in 0..n.unsigned_abs() {
        x = if n > 0 { x.next_up() } else { x.next_down() };
    }
    x
}

/// Deaths per 1000 live births.
pub fn compute_risk(deaths: f64, live_births: f64) -> Result<f64> {
    if !(live_births > 0.0) {
        return Err(Error::validation(format!("live births {live_births} must be positive")));
    }
    Ok(1000.0 * deaths / live_births)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseEstimate {
    pub cause: Cause,
    pub fraction: f64,
    pub deaths: f64,
    pub risk: f64,
    #[serde(default)]
    pub fraction_ci: Option<Bounds>,
    #[serde(default)]
    pub deaths_ci: Option<Bounds>,
    #[serde(default)]
    pub risk_ci: Option<Bounds>,
}

/// Cause-specific deaths, risks and fractions for one unit-year-period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub unit_id: String,
    pub year: i32,
    pub period: Period,
    #[serde(default)]
    pub method: Option<EstimationMethod>,
    pub envelope: f64,
    pub live_births: f64,
    pub causes: Vec<CauseEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl AllocationResult {
    pub fn allocate(
        unit_id: &str,
        year: i32,
        period: Period,
        fractions: &CauseDistribution,
        envelope: f64,
        live_births: f64,
    ) -> Result<Self> {
        let deaths = allocate_deaths(fractions, envelope)?;
        let causes = deaths
            .into_iter()
            .map(|(cause, d)| {
                Ok(CauseEstimate {
                    cause,
                    fraction: fractions.get(cause).expect("same causes"),
                    deaths: d,
                    risk: compute_risk(d, live_births)?,
                    fraction_ci: None,
                    deaths_ci: None,
                    risk_ci: None,
                })
            })
            .collect::<Result<_>>()?;
        Ok(AllocationResult {
            unit_id: unit_id.to_string(),
            year,
            period,
            method: None,
            envelope,
            live_births,
            causes,
            flags: Vec::new(),
        })
    }

    pub fn cause(&self, cause: Cause) -> Option<&CauseEstimate> {
        self.causes.iter().find(|c| c.cause == cause)
    }

    pub fn deaths(&self, cause: Cause) -> f64 {
        self.cause(cause).map_or(0.0, |c| c.deaths)
    }

    pub fn total_deaths(&self) -> f64 {
        sequential_sum(self.causes.iter().map(|c| c.deaths))
    }

    /// Neonatal mortality rate implied by this result's envelope.
    pub fn nmr(&self) -> f64 {
        1000.0 * self.envelope / self.live_births
    }
}

/// Builds a result from per-cause deaths, deriving fractions and risks.
fn from_deaths(
    unit_id: String,
    year: i32,
    period: Period,
    method: Option<EstimationMethod>,
    envelope: f64,
    live_births: f64,
    deaths: Vec<(Cause, f64)>,
) -> Result<AllocationResult> {
    let total = sequential_sum(deaths.iter().map(|d| d.1));
    let causes = deaths
        .into_iter()
        .map(|(cause, d)| {
            Ok(CauseEstimate {
                cause,
                fraction: if total > 0.0 { d / total } else { 0.0 },
                deaths: d,
                risk: compute_risk(d, live_births)?,
                fraction_ci: None,
                deaths_ci: None,
                risk_ci: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AllocationResult {
        unit_id,
        year,
        period,
        method,
        envelope,
        live_births,
        causes,
        flags: Vec::new(),
    })
}

/// Overall-period result: per-cause deaths are early plus late.
pub fn combine_periods(early: &AllocationResult, late: &AllocationResult) -> Result<AllocationResult> {
    if early.unit_id != late.unit_id || early.year != late.year {
        return Err(Error::validation(format!(
            "cannot combine {} {} with {} {}",
            early.unit_id, early.year, late.unit_id, late.year
        )));
    }
    if early.period != Period::Early || late.period != Period::Late {
        return Err(Error::validation("combine_periods takes an early and a late result"));
    }
    if early.live_births != late.live_births {
        return Err(Error::validation(format!(
            "{} {}: early and late results use different live births",
            early.unit_id, early.year
        )));
    }
    let causes = union_causes([early, late]);
    let deaths = causes
        .into_iter()
        .map(|c| (c, early.deaths(c) + late.deaths(c)))
        .collect();
    from_deaths(
        early.unit_id.clone(),
        early.year,
        Period::Overall,
        early.method,
        early.envelope + late.envelope,
        early.live_births,
        deaths,
    )
}

fn union_causes<'a>(results: impl IntoIterator<Item = &'a AllocationResult>) -> Vec<Cause> {
    let present: BTreeSet<Cause> = results
        .into_iter()
        .flat_map(|r| r.causes.iter().map(|c| c.cause))
        .collect();
    Cause::ALL.iter().copied().filter(|c| present.contains(c)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Global,
    MdgRegion,
    NmrBand,
    IncomeGroup,
    EstimationMethod,
    IndiaNational,
}

impl Grouping {
    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Global => "global",
            Grouping::MdgRegion => "mdg_region",
            Grouping::NmrBand => "nmr_band",
            Grouping::IncomeGroup => "income_group",
            Grouping::EstimationMethod => "estimation_method",
            Grouping::IndiaNational => "india_national",
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// NMR band edges; bands are closed on the left and open on the right.
pub const NMR_BAND_EDGES: [f64; 3] = [5.0, 15.0, 30.0];
pub const NMR_BAND_LABELS: [&str; 4] = ["<5", "5 to <15", "15 to <30", "30+"];

pub fn nmr_band(nmr: f64) -> &'static str {
    let idx = NMR_BAND_EDGES.iter().take_while(|&&e| nmr >= e).count();
    NMR_BAND_LABELS[idx]
}

pub type MembershipTable = BTreeMap<String, Membership>;

pub fn membership_table(rows: Vec<Membership>) -> MembershipTable {
    rows.into_iter().map(|m| (m.unit_id.clone(), m)).collect()
}

/// NMR per (unit, year) from the early and late envelopes (or the overall
/// one when periods are not split).
fn unit_nmr(results: &[AllocationResult]) -> BTreeMap<(String, i32), f64> {
    let mut split: BTreeMap<(String, i32), (f64, f64)> = BTreeMap::new();
    let mut overall: BTreeMap<(String, i32), f64> = BTreeMap::new();
    for r in results {
        let key = (r.unit_id.clone(), r.year);
        match r.period {
            Period::Overall => {
                overall.insert(key, r.nmr());
            }
            _ => {
                let e = split.entry(key).or_insert((0.0, r.live_births));
                e.0 += r.envelope;
            }
        }
    }
    for (key, (deaths, births)) in split {
        overall.entry(key).or_insert(1000.0 * deaths / births);
    }
    overall
}

/// Group label of each result under `grouping`; `None` excludes the result.
fn group_labels(
    results: &[AllocationResult],
    grouping: Grouping,
    membership: &MembershipTable,
) -> Result<Vec<Option<String>>> {
    let nmr = (grouping == Grouping::NmrBand).then(|| unit_nmr(results));
    let mut missing = BTreeSet::new();
    let labels = results
        .iter()
        .map(|r| {
            let member = membership.get(&r.unit_id);
            let label = match grouping {
                Grouping::Global => Some("global".to_string()),
                Grouping::NmrBand => {
                    let v = nmr.as_ref().expect("computed")[&(r.unit_id.clone(), r.year)];
                    Some(nmr_band(v).to_string())
                }
                Grouping::EstimationMethod => r.method.map(|m| m.to_string()),
                Grouping::MdgRegion => member.and_then(|m| m.mdg_region.clone()),
                Grouping::IncomeGroup => member.and_then(|m| m.income_group.clone()),
                Grouping::IndiaNational => {
                    return member.and_then(|m| m.india_state_of.clone());
                }
            };
            if label.is_none() {
                missing.insert(r.unit_id.clone());
            }
            label
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "no {grouping} membership for: {}",
            missing.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(labels)
}

/// Pools results within groups: deaths and births are summed, fractions and
/// risks re-derived from the sums. Output is ordered by (group, year, period).
pub fn aggregate(
    results: &[AllocationResult],
    grouping: Grouping,
    membership: &MembershipTable,
) -> Result<Vec<AllocationResult>> {
    let labels = group_labels(results, grouping, membership)?;
    let mut groups: BTreeMap<(String, i32, Period), Vec<&AllocationResult>> = BTreeMap::new();
    for (r, label) in results.iter().zip(labels) {
        if let Some(label) = label {
            groups.entry((label, r.year, r.period)).or_default().push(r);
        }
    }
    groups
        .into_iter()
        .map(|((label, year, period), members)| pool(label, year, period, &members))
        .collect()
}

fn pool(label: String, year: i32, period: Period, members: &[&AllocationResult]) -> Result<AllocationResult> {
    let mut seen = BTreeSet::new();
    for m in members {
        if !seen.insert(m.unit_id.as_str()) {
            return Err(Error::validation(format!(
                "{} appears twice in group {label} {year} {period}",
                m.unit_id
            )));
        }
    }
    let causes = union_causes(members.iter().copied());
    let deaths = causes
        .into_iter()
        .map(|c| (c, sequential_sum(members.iter().map(|m| m.deaths(c)))))
        .collect();
    let method = members[0].method.filter(|m| members.iter().all(|x| x.method == Some(*m)));
    from_deaths(
        label,
        year,
        period,
        method,
        sequential_sum(members.iter().map(|m| m.envelope)),
        sequential_sum(members.iter().map(|m| m.live_births)),
        deaths,
    )
}

/// National results from state-level results. Every state-year needs an
/// envelope, and the results must use that envelope's births.
pub fn aggregate_india_states(
    state_results: &[AllocationResult],
    state_envelopes: &[EnvelopeRecord],
    national_id: &str,
) -> Result<Vec<AllocationResult>> {
    let envelopes: BTreeMap<(&str, i32), &EnvelopeRecord> = state_envelopes
        .iter()
        .map(|e| ((e.unit_id.as_str(), e.year), e))
        .collect();
    let mut missing = BTreeSet::new();
    for r in state_results {
        match envelopes.get(&(r.unit_id.as_str(), r.year)) {
            None => {
                missing.insert(format!("{} {}", r.unit_id, r.year));
            }
            Some(e) if e.live_births != r.live_births => {
                return Err(Error::validation(format!(
                    "{} {}: result births differ from the state envelope",
                    r.unit_id, r.year
                )));
            }
            Some(_) => {}
        }
    }
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "missing state envelopes for: {}",
            missing.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let membership: MembershipTable = state_results
        .iter()
        .map(|r| {
            (
                r.unit_id.clone(),
                Membership {
                    unit_id: r.unit_id.clone(),
                    mdg_region: None,
                    income_group: None,
                    india_state_of: Some(national_id.to_string()),
                },
            )
        })
        .collect();
    aggregate(state_results, Grouping::IndiaNational, &membership)
}

/// Round half away from zero at `decimals`, tolerant of binary
/// representation error just below the half.
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let y = x * scale;
    let nudged = y + y.signum() * 1e-9 * y.abs().max(1.0);
    nudged.round() / scale
}
