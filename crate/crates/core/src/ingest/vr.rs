//! Proportional cause distributions from ICD-coded VR death counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::icd::{map_icd_code, IcdCategory, IcdMapping, IcdRevision};
use crate::cause::{Cause, CauseDistribution, CauseSet, Period};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VrRecord {
    pub country: String,
    pub year: i32,
    pub period: Period,
    pub icd_revision: IcdRevision,
    pub code: String,
    pub deaths: u64,
}

/// What to do with codes the mapping table cannot place unambiguously.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictPolicy {
    /// Conflicting or unmapped codes are errors.
    #[default]
    Reject,
    /// Conflicts go to the first listed category; unmapped codes are
    /// dropped. Every such decision is recorded in the result.
    FirstListedRow,
}

/// A VR country-year-period distribution with the counts behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrDistribution {
    pub country: String,
    pub year: i32,
    pub period: Period,
    pub distribution: CauseDistribution,
    pub counts: BTreeMap<Cause, u64>,
    pub mapped_deaths: u64,
    pub excluded_deaths: u64,
    /// Codes whose placement needed the conflict policy, with the category used.
    #[serde(default)]
    pub resolved_conflicts: Vec<(String, IcdCategory)>,
    #[serde(default)]
    pub dropped_unmapped: Vec<(String, u64)>,
}

impl VrDistribution {
    pub fn count(&self, cause: Cause) -> u64 {
        self.counts.get(&cause).copied().unwrap_or(0)
    }
}

/// Builds the fraction over the seven VR causes for one country-year-period.
///
/// Excluded codes are removed before dividing. Returns `MissingData` when no
/// death maps to a cause, which marks the year for imputation.
pub fn build_vr_distribution(records: &[VrRecord], policy: ConflictPolicy) -> Result<VrDistribution> {
    let first = records
        .first()
        .ok_or_else(|| Error::MissingData("no VR records".into()))?;
    let (country, year, period) = (first.country.clone(), first.year, first.period);
    if period == Period::Overall {
        return Err(Error::validation(format!(
            "VR record {country} {year} has period 'overall'; VR input must be early or late"
        )));
    }
    let cause_set = CauseSet::vr();
    let mut counts: BTreeMap<Cause, u64> = cause_set.causes().iter().map(|&c| (c, 0)).collect();
    let mut excluded = 0u64;
    let mut resolved = Vec::new();
    let mut dropped = Vec::new();

    for r in records {
        if r.country != country || r.year != year || r.period != period {
            return Err(Error::validation(format!(
                "VR records mix keys: {country} {year} {period} and {} {} {}",
                r.country, r.year, r.period
            )));
        }
        let category = match map_icd_code(&r.code, r.icd_revision)? {
            IcdMapping::Cause(c) => IcdCategory::Cause(c),
            IcdMapping::Excluded => IcdCategory::Excluded,
            IcdMapping::Unmapped => match policy {
                ConflictPolicy::Reject => {
                    return Err(Error::validation(format!(
                        "{country} {year} {period}: {} code '{}' is not in the mapping table",
                        r.icd_revision, r.code
                    )))
                }
                ConflictPolicy::FirstListedRow => {
                    dropped.push((r.code.clone(), r.deaths));
                    continue;
                }
            },
            IcdMapping::Conflict(cands) => match policy {
                ConflictPolicy::Reject => {
                    let names: Vec<String> = cands.iter().map(ToString::to_string).collect();
                    return Err(Error::validation(format!(
                        "{country} {year} {period}: {} code '{}' maps to several categories ({})",
                        r.icd_revision,
                        r.code,
                        names.join(", ")
                    )));
                }
                ConflictPolicy::FirstListedRow => {
                    resolved.push((r.code.clone(), cands[0]));
                    cands[0]
                }
            },
        };
        match category {
            IcdCategory::Excluded => excluded += r.deaths,
            IcdCategory::Cause(c) => match counts.get_mut(&c) {
                Some(n) => *n += r.deaths,
                None => {
                    return Err(Error::validation(format!(
                        "code '{}' maps to {c}, which is not a VR cause",
                        r.code
                    )))
                }
            },
        }
    }

    let mapped: u64 = counts.values().sum();
    if mapped == 0 {
        return Err(Error::MissingData(format!(
            "{country} {year} {period}: no deaths map to a VR cause"
        )));
    }
    let distribution = CauseDistribution::from_weights(
        cause_set
            .causes()
            .iter()
            .map(|c| (*c, counts[c] as f64))
            .collect(),
    )?;
    Ok(VrDistribution {
        country,
        year,
        period,
        distribution,
        counts,
        mapped_deaths: mapped,
        excluded_deaths: excluded,
        resolved_conflicts: resolved,
        dropped_unmapped: dropped,
    })
}

/// Groups records by (country, year, period) in key order.
pub fn group_vr_records(records: &[VrRecord]) -> BTreeMap<(String, i32, Period), Vec<VrRecord>> {
    let mut out: BTreeMap<(String, i32, Period), Vec<VrRecord>> = BTreeMap::new();
    for r in records {
        out.entry((r.country.clone(), r.year, r.period))
            .or_default()
            .push(r.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(code: &str, deaths: u64) -> VrRecord {
        VrRecord {
            country: "AAA".into(),
            year: 2010,
            period: Period::Early,
            icd_revision: IcdRevision::Icd10,
            code: code.into(),
            deaths,
        }
    }

    #[test]
    fn divides_by_mapped_total() {
        let recs = vec![
            rec("P22", 40), // preterm via respiratory distress
            rec("P21", 24),
            rec("Q24", 20),
            rec("P36", 8),
            rec("P23", 4),
            rec("P29", 4),
            rec("R99", 100),
        ];
        let d = build_vr_distribution(&recs, ConflictPolicy::Reject).unwrap();
        assert_eq!(d.mapped_deaths, 100);
        assert_eq!(d.excluded_deaths, 100);
        assert!((d.distribution.get(Cause::Sepsis).unwrap() - 0.08).abs() < 1e-15);
        assert_eq!(d.distribution.get(Cause::Injuries), Some(0.0));
    }

    #[test]
    fn all_excluded_is_missing_data() {
        let err = build_vr_distribution(&[rec("R99", 3)], ConflictPolicy::Reject).unwrap_err();
        assert!(matches!(err, Error::MissingData(_)));
    }

    #[test]
    fn conflicts_follow_policy() {
        let recs = vec![rec("P07", 5), rec("P21", 5)];
        assert!(build_vr_distribution(&recs, ConflictPolicy::Reject).is_err());
        let d = build_vr_distribution(&recs, ConflictPolicy::FirstListedRow).unwrap();
        assert_eq!(d.resolved_conflicts.len(), 1);
        assert_eq!(d.mapped_deaths, 10);
    }

    #[test]
    fn overall_period_rejected() {
        let mut r = rec("P21", 1);
        r.period = Period::Overall;
        assert!(build_vr_distribution(&[r], ConflictPolicy::Reject).is_err());
    }
}
