//! Input loading and normalisation: VR counts, study observations,
//! covariate panels, envelopes and group assignments.

pub mod icd;
pub mod impute;
pub mod issues;
pub mod load;
pub mod missing;
pub mod vr;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cause::{Cause, CauseMask, CauseSet, Period};
use crate::error::{Error, Result};

pub use icd::{map_icd_code, IcdCategory, IcdMapping, IcdRevision, IcdTable};
pub use impute::{impute_scalar, impute_series, impute_vectors, ImputeSource, ImputedYear};
pub use issues::{Issue, IssueReport, Severity};
pub use missing::apply_missing_cause_policy;
pub use vr::{build_vr_distribution, group_vr_records, ConflictPolicy, VrDistribution, VrRecord};

/// Minimum deaths for a study observation to be considered reliable.
pub const MIN_STUDY_DEATHS: u64 = 20;

/// One reporting cell: a nonempty set of causes and the deaths recorded
/// against it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub causes: CauseMask,
    pub deaths: u64,
}

impl Cell {
    pub fn single(cause: Cause, deaths: u64) -> Self {
        Cell {
            causes: CauseMask::single(cause),
            deaths,
        }
    }
}

/// One study or country-year-period row of model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub unit_id: String,
    pub year: i32,
    pub period: Period,
    pub cells: Vec<Cell>,
    pub total_deaths: u64,
    #[serde(default)]
    pub covariates: BTreeMap<String, f64>,
    #[serde(default)]
    pub source: String,
}

impl ObservationRecord {
    /// Causes that appear in some cell.
    pub fn reported(&self) -> CauseMask {
        self.cells
            .iter()
            .fold(CauseMask::EMPTY, |acc, c| acc.union(c.causes))
    }

    pub fn cell_total(&self) -> u64 {
        self.cells.iter().map(|c| c.deaths).sum()
    }

    /// Checks that cells partition the cause set and counts add up.
    pub fn validate(&self, cause_set: &CauseSet) -> Result<()> {
        let mut seen = CauseMask::EMPTY;
        for cell in &self.cells {
            if cell.causes.is_empty() {
                return Err(self.invalid("empty cell"));
            }
            if cell.causes.intersects(seen) {
                return Err(self.invalid(&format!("cause repeated across cells ({})", cell.causes)));
            }
            if cell.causes.iter().any(|c| !cause_set.contains(c)) {
                return Err(self.invalid(&format!(
                    "cell {} has causes outside the {} cause set",
                    cell.causes,
                    cause_set.family()
                )));
            }
            seen = seen.union(cell.causes);
        }
        if seen != cause_set.mask() {
            return Err(self.invalid(&format!(
                "cells cover {seen} but the cause set is {}",
                cause_set.mask()
            )));
        }
        if self.cell_total() != self.total_deaths {
            return Err(self.invalid(&format!(
                "cell counts sum to {} but total_deaths is {}",
                self.cell_total(),
                self.total_deaths
            )));
        }
        Ok(())
    }

    fn invalid(&self, msg: &str) -> Error {
        Error::validation(format!(
            "observation {} {} {}: {msg}",
            self.unit_id, self.year, self.period
        ))
    }
}

/// Estimation route assigned to a country.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMethod {
    Vr,
    LowMortalityModel,
    HighMortalityModel,
}

impl EstimationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimationMethod::Vr => "vr",
            EstimationMethod::LowMortalityModel => "low_mortality_model",
            EstimationMethod::HighMortalityModel => "high_mortality_model",
        }
    }
}

impl fmt::Display for EstimationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "vr" => Ok(EstimationMethod::Vr),
            "low_mortality_model" => Ok(EstimationMethod::LowMortalityModel),
            "high_mortality_model" => Ok(EstimationMethod::HighMortalityModel),
            other => Err(Error::validation(format!("unknown estimation method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub country: String,
    pub method: EstimationMethod,
}

/// Long-format covariate values keyed by unit, then year, then name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariatePanel {
    pub values: BTreeMap<String, BTreeMap<i32, BTreeMap<String, f64>>>,
}

impl CovariatePanel {
    pub fn insert(&mut self, unit: &str, year: i32, name: &str, value: f64) -> Option<f64> {
        self.values
            .entry(unit.to_string())
            .or_default()
            .entry(year)
            .or_default()
            .insert(name.to_string(), value)
    }

    pub fn get(&self, unit: &str, year: i32) -> Option<&BTreeMap<String, f64>> {
        self.values.get(unit).and_then(|y| y.get(&year))
    }

    pub fn units(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Every covariate name present anywhere in the panel.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .values
            .values()
            .flat_map(|years| years.values().flat_map(|m| m.keys().cloned()))
            .collect();
        names.sort();
        names.dedup();
        names
    }
}
