//! Cause categories, neonatal periods and proportional cause distributions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(fractions) - 1|` for a valid distribution.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    Preterm,
    Intrapartum,
    Congenital,
    Sepsis,
    Pneumonia,
    Diarrhoea,
    Tetanus,
    Injuries,
    Other,
}

impl Cause {
    pub const ALL: [Cause; 9] = [
        Cause::Preterm,
        Cause::Intrapartum,
        Cause::Congenital,
        Cause::Sepsis,
        Cause::Pneumonia,
        Cause::Diarrhoea,
        Cause::Tetanus,
        Cause::Injuries,
        Cause::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Cause::Preterm => "preterm",
            Cause::Intrapartum => "intrapartum",
            Cause::Congenital => "congenital",
            Cause::Sepsis => "sepsis",
            Cause::Pneumonia => "pneumonia",
            Cause::Diarrhoea => "diarrhoea",
            Cause::Tetanus => "tetanus",
            Cause::Injuries => "injuries",
            Cause::Other => "other",
        }
    }

    /// Capitalised label used in published-style tables.
    pub fn label(self) -> &'static str {
        match self {
            Cause::Preterm => "Preterm",
            Cause::Intrapartum => "Intrapartum",
            Cause::Congenital => "Congenital",
            Cause::Sepsis => "Sepsis",
            Cause::Pneumonia => "Pneumonia",
            Cause::Diarrhoea => "Diarrhoea",
            Cause::Tetanus => "Tetanus",
            Cause::Injuries => "Injuries",
            Cause::Other => "Other",
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cause {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let cause = match lower.as_str() {
            "preterm" => Cause::Preterm,
            "intrapartum" => Cause::Intrapartum,
            "congenital" => Cause::Congenital,
            "sepsis" => Cause::Sepsis,
            "pneumonia" => Cause::Pneumonia,
            "diarrhoea" | "diarrhea" => Cause::Diarrhoea,
            "tetanus" => Cause::Tetanus,
            "injuries" | "injury" => Cause::Injuries,
            "other" => Cause::Other,
            _ => return Err(Error::validation(format!("unknown cause '{s}'"))),
        };
        Ok(cause)
    }
}

/// A set of causes stored as a bitmask. Used for (possibly composite)
/// reporting cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CauseMask(u16);

impl CauseMask {
    pub const EMPTY: CauseMask = CauseMask(0);

    pub fn single(cause: Cause) -> Self {
        CauseMask(cause.bit())
    }

    pub fn from_causes<I: IntoIterator<Item = Cause>>(causes: I) -> Self {
        CauseMask(causes.into_iter().fold(0, |acc, c| acc | c.bit()))
    }

    pub fn contains(self, cause: Cause) -> bool {
        self.0 & cause.bit() != 0
    }

    pub fn union(self, other: CauseMask) -> CauseMask {
        CauseMask(self.0 | other.0)
    }

    pub fn intersects(self, other: CauseMask) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Cause> {
        Cause::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

impl fmt::Display for CauseMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Cause::as_str).collect();
        f.write_str(&names.join("+"))
    }
}

impl Serialize for CauseMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CauseMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut mask = CauseMask::EMPTY;
        for part in s.split('+') {
            let cause: Cause = part.parse().map_err(serde::de::Error::custom)?;
            mask = mask.union(CauseMask::single(cause));
        }
        if mask.is_empty() {
            return Err(serde::de::Error::custom("empty cause cell"));
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Early,
    Late,
    Overall,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::Early => "early",
            Period::Late => "late",
            Period::Overall => "overall",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Period::Early => "Early",
            Period::Late => "Late",
            Period::Overall => "Overall",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "early" => Ok(Period::Early),
            "late" => Ok(Period::Late),
            "overall" | "neonatal" => Ok(Period::Overall),
            _ => Err(Error::validation(format!("unknown period '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    LowMortality,
    HighMortality,
    Vr,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::LowMortality => "low_mortality",
            ModelFamily::HighMortality => "high_mortality",
            ModelFamily::Vr => "vr",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered cause list with a designated baseline (reference) cause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCauseSet")]
pub struct CauseSet {
    family: ModelFamily,
    causes: Vec<Cause>,
    baseline: Cause,
}

#[derive(Deserialize)]
struct RawCauseSet {
    family: ModelFamily,
    causes: Vec<Cause>,
    baseline: Cause,
}

impl TryFrom<RawCauseSet> for CauseSet {
    type Error = Error;

    fn try_from(raw: RawCauseSet) -> Result<Self> {
        CauseSet::new(raw.family, raw.causes, raw.baseline)
    }
}

const SEVEN_CAUSES: [Cause; 7] = [
    Cause::Preterm,
    Cause::Intrapartum,
    Cause::Congenital,
    Cause::Sepsis,
    Cause::Pneumonia,
    Cause::Injuries,
    Cause::Other,
];

const EIGHT_CAUSES: [Cause; 8] = [
    Cause::Preterm,
    Cause::Intrapartum,
    Cause::Congenital,
    Cause::Sepsis,
    Cause::Pneumonia,
    Cause::Diarrhoea,
    Cause::Tetanus,
    Cause::Other,
];

impl CauseSet {
    /// Builds a cause set; the baseline must be a member and causes must be
    /// distinct.
    pub fn new(family: ModelFamily, causes: Vec<Cause>, baseline: Cause) -> Result<Self> {
        if causes.len() < 2 {
            return Err(Error::validation("a cause set needs at least two causes"));
        }
        if CauseMask::from_causes(causes.iter().copied()).len() != causes.len() {
            return Err(Error::validation("duplicate cause in cause set"));
        }
        if !causes.contains(&baseline) {
            return Err(Error::validation(format!(
                "baseline {baseline} is not a member of the cause set"
            )));
        }
        Ok(CauseSet {
            family,
            causes,
            baseline,
        })
    }

    pub fn for_family(family: ModelFamily) -> Self {
        match family {
            ModelFamily::LowMortality | ModelFamily::Vr => CauseSet {
                family,
                causes: SEVEN_CAUSES.to_vec(),
                baseline: Cause::Preterm,
            },
            ModelFamily::HighMortality => CauseSet {
                family,
                causes: EIGHT_CAUSES.to_vec(),
                baseline: Cause::Intrapartum,
            },
        }
    }

    pub fn low_mortality() -> Self {
        Self::for_family(ModelFamily::LowMortality)
    }

    pub fn high_mortality() -> Self {
        Self::for_family(ModelFamily::HighMortality)
    }

    pub fn vr() -> Self {
        Self::for_family(ModelFamily::Vr)
    }

    /// Two-cause submodel (target against the baseline) used by covariate
    /// selection.
    pub fn pair(&self, target: Cause) -> Result<Self> {
        if target == self.baseline || !self.contains(target) {
            return Err(Error::validation(format!(
                "{target} is not a non-baseline member of the cause set"
            )));
        }
        Ok(CauseSet {
            family: self.family,
            causes: vec![self.baseline, target],
            baseline: self.baseline,
        })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn causes(&self) -> &[Cause] {
        &self.causes
    }

    pub fn baseline(&self) -> Cause {
        self.baseline
    }

    pub fn len(&self) -> usize {
        self.causes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.causes.is_empty()
    }

    pub fn contains(&self, cause: Cause) -> bool {
        self.causes.contains(&cause)
    }

    pub fn index_of(&self, cause: Cause) -> Option<usize> {
        self.causes.iter().position(|c| *c == cause)
    }

    pub fn mask(&self) -> CauseMask {
        CauseMask::from_causes(self.causes.iter().copied())
    }

    /// Non-baseline causes, in set order. One log-cause ratio each.
    pub fn ratios(&self) -> impl Iterator<Item = Cause> + '_ {
        self.causes.iter().copied().filter(move |c| *c != self.baseline)
    }
}

/// Fractions over an ordered cause list; always on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Cause, f64>", into = "BTreeMap<Cause, f64>")]
pub struct CauseDistribution {
    entries: Vec<(Cause, f64)>,
}

impl CauseDistribution {
    /// Validates that fractions lie in `[0, 1]` and sum to one.
    pub fn new(entries: Vec<(Cause, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::validation("empty cause distribution"));
        }
        let mut seen = CauseMask::EMPTY;
        let mut total = 0.0;
        for &(cause, fraction) in &entries {
            if seen.contains(cause) {
                return Err(Error::validation(format!("duplicate cause {cause}")));
            }
            seen = seen.union(CauseMask::single(cause));
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::validation(format!(
                    "fraction for {cause} outside [0, 1]: {fraction}"
                )));
            }
            total += fraction;
        }
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::validation(format!(
                "fractions sum to {total}, expected 1"
            )));
        }
        Ok(CauseDistribution { entries })
    }

    /// Divides nonnegative weights by their total.
    pub fn from_weights(weights: Vec<(Cause, f64)>) -> Result<Self> {
        let total: f64 = weights.iter().map(|(_, w)| *w).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::MissingData(format!(
                "cannot normalise weights with total {total}"
            )));
        }
        if weights.iter().any(|(_, w)| *w < 0.0) {
            return Err(Error::validation("negative weight in distribution"));
        }
        let entries = weights
            .into_iter()
            .map(|(c, w)| (c, (w / total).clamp(0.0, 1.0)))
            .collect();
        Self::new(entries)
    }

    pub fn uniform(causes: &[Cause]) -> Self {
        let share = 1.0 / causes.len() as f64;
        CauseDistribution {
            entries: causes.iter().map(|c| (*c, share)).collect(),
        }
    }

    pub fn get(&self, cause: Cause) -> Option<f64> {
        self.entries
            .iter()
            .find(|(c, _)| *c == cause)
            .map(|(_, f)| *f)
    }

    pub fn causes(&self) -> impl Iterator<Item = Cause> + '_ {
        self.entries.iter().map(|(c, _)| *c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cause, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, f)| *f).sum()
    }
}

impl TryFrom<BTreeMap<Cause, f64>> for CauseDistribution {
    type Error = Error;

    fn try_from(map: BTreeMap<Cause, f64>) -> Result<Self> {
        CauseDistribution::new(map.into_iter().collect())
    }
}

impl From<CauseDistribution> for BTreeMap<Cause, f64> {
    fn from(d: CauseDistribution) -> Self {
        d.entries.into_iter().collect()
    }
}
