//! ICD-9 / ICD-10 code mapping onto the seven VR cause categories.
//!
//! Ranges are held as closed intervals over a numeric key with one decimal
//! digit of resolution. A three-character code covers all of its fourth-digit
//! children, so it matches a range only when every child maps to the same
//! category. When ranges nest, the narrowest one wins; identical or partially
//! overlapping ranges assigned to different categories are conflicts and are
//! returned as such instead of being resolved here.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::cause::Cause;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum IcdRevision {
    Icd9,
    Icd10,
}

impl TryFrom<u8> for IcdRevision {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            9 => Ok(IcdRevision::Icd9),
            10 => Ok(IcdRevision::Icd10),
            _ => Err(Error::validation(format!("unsupported ICD revision {v}"))),
        }
    }
}

impl From<IcdRevision> for u8 {
    fn from(r: IcdRevision) -> u8 {
        match r {
            IcdRevision::Icd9 => 9,
            IcdRevision::Icd10 => 10,
        }
    }
}

impl fmt::Display for IcdRevision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ICD-{}", u8::from(*self))
    }
}

/// What a row of the range table assigns codes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IcdCategory {
    Cause(Cause),
    Excluded,
}

impl fmt::Display for IcdCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IcdCategory::Cause(c) => write!(f, "{c}"),
            IcdCategory::Excluded => f.write_str("excluded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IcdMapping {
    Cause(Cause),
    Excluded,
    Unmapped,
    /// Several categories claim the code with equal specificity. Candidates
    /// are listed in table row order.
    Conflict(Vec<IcdCategory>),
}

impl IcdMapping {
    fn from_category(cat: IcdCategory) -> Self {
        match cat {
            IcdCategory::Cause(c) => IcdMapping::Cause(c),
            IcdCategory::Excluded => IcdMapping::Excluded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IcdRange {
    pub revision: IcdRevision,
    pub category: IcdCategory,
    /// Position of the source row in the table; lower is listed first.
    pub row: usize,
    pub text: String,
    lo: u32,
    hi: u32,
}

impl IcdRange {
    fn width(&self) -> u32 {
        self.hi - self.lo
    }

    fn contains_key(&self, key: u32) -> bool {
        self.lo <= key && key <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapKind {
    /// One range lies strictly inside the other; the inner one wins.
    Nested,
    /// Identical or partially overlapping ranges in different categories.
    Conflict,
}

#[derive(Debug, Clone, Serialize)]
pub struct RangeOverlap {
    pub revision: IcdRevision,
    pub first: String,
    pub first_category: IcdCategory,
    pub second: String,
    pub second_category: IcdCategory,
    pub kind: OverlapKind,
}

#[derive(Debug, Clone)]
pub struct IcdTable {
    ranges: Vec<IcdRange>,
}

const ICD10_ROWS: &[(IcdCategory, &str)] = &[
    (
        IcdCategory::Cause(Cause::Preterm),
        "P01.0-P01.1, P07, P22, P25-P28, P52, P61.2, P77",
    ),
    (
        IcdCategory::Cause(Cause::Intrapartum),
        "P01.7-P02.1, P02.4-P02.6, P03, P07, P10-P15, P20-P21, P24, P50, P90-P91",
    ),
    (
        IcdCategory::Cause(Cause::Congenital),
        "D55-D68.9, E01-E07, E70-E84, G10-G99, H, I, K, L, M, N, P35, P76, Q",
    ),
    (
        IcdCategory::Cause(Cause::Sepsis),
        "A00-A35, A38-A99, B, G00-G09, P36-P39",
    ),
    (IcdCategory::Cause(Cause::Pneumonia), "A36-A37, J, P23"),
    (IcdCategory::Cause(Cause::Injuries), "S, V, W, X, Y"),
    (
        IcdCategory::Cause(Cause::Other),
        "C, D00-D54.9, D69-D99, E00, E08-E69, E85-E99, P00, P01.2-P01.6, P02.2-P02.3, \
         P02.7-P02.9, P04-P06, P08, P29, P51, P53-P61.1, P61.3-P74, P78, P80-P83, P93-P94",
    ),
    (IcdCategory::Excluded, "F, O, P92, P95-96, R"),
];

const ICD9_ROWS: &[(IcdCategory, &str)] = &[
    (
        IcdCategory::Cause(Cause::Preterm),
        "434.9, 518.1-518.9, 761.0-761.1, 765, 769-770.0, 770.2-770.9, 772.1, 774.2, 776.6, \
         777.5-777.6, 786.3",
    ),
    (
        IcdCategory::Cause(Cause::Intrapartum),
        "348.1-348.9, 437.1-437.9, 723.4, 761.7-762.1, 762.4-762.6, 763, 767-768, 770.1, \
         772.2, 779.0-779.2",
    ),
    (
        IcdCategory::Cause(Cause::Congenital),
        "056, 240-243, 245-259, 272-277, 279.3-286, 288.2, 303, 330-348.0, 349-426, \
         429-434.0, 435-437.0, 438-451, 520-723.0, 724-728, 731-759, 775.2, 777.0, 795.2",
    ),
    (
        IcdCategory::Cause(Cause::Sepsis),
        "000-031, 034-055, 057-134, 136-139, 320-326, 491, 730, 771, 780.6, 785.4",
    ),
    (
        IcdCategory::Cause(Cause::Pneumonia),
        "032-033, 460-490, 492-518.0",
    ),
    (IcdCategory::Cause(Cause::Injuries), "800-999"),
    (
        IcdCategory::Cause(Cause::Other),
        "135, 140-239, 244, 260-271, 278-279.2, 287-288.1, 288.3-289, 427, 452-459, 760, \
         761.2-761.6, 762.2-762.3, 762.7-762.9, 764, 766, 772.0, 772.3-774.1, 774.3-775.1, \
         775.3-776.5, 776.7-776.9, 778.0, 779.5-779.6",
    ),
    (
        IcdCategory::Excluded,
        "295.4, 305.6, 205.9, 308.9, 311.0, 317.0, 319.0, 779.3, 779.8-799",
    ),
];

/// Parsed code: a closed key interval (three-character codes span ten keys).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CodeKey {
    Interval(u32, u32),
    /// ICD-9 V and E supplementary codes, which no category covers.
    Supplementary,
}

fn parse_icd10(code: &str) -> Option<CodeKey> {
    let bytes = code.as_bytes();
    if bytes.len() < 3 || !bytes[0].is_ascii_uppercase() {
        return None;
    }
    if !bytes[1].is_ascii_digit() || !bytes[2].is_ascii_digit() {
        return None;
    }
    let letter = u32::from(bytes[0] - b'A');
    let num = u32::from(bytes[1] - b'0') * 10 + u32::from(bytes[2] - b'0');
    let base = letter * 1000 + num * 10;
    let rest = &code[3..];
    let rest = rest.strip_prefix('.').unwrap_or(rest);
    if rest.is_empty() {
        return Some(CodeKey::Interval(base, base + 9));
    }
    if !rest.bytes().all(|b| b.is_ascii_digit()) || rest.len() > 2 {
        return None;
    }
    let sub = u32::from(rest.as_bytes()[0] - b'0');
    Some(CodeKey::Interval(base + sub, base + sub))
}

fn parse_icd9(code: &str) -> Option<CodeKey> {
    let bytes = code.as_bytes();
    if let Some(first) = bytes.first() {
        if *first == b'V' || *first == b'E' {
            let digits = code[1..].replace('.', "");
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                return Some(CodeKey::Supplementary);
            }
            return None;
        }
    }
    if bytes.len() < 3 || !bytes[..3].iter().all(u8::is_ascii_digit) {
        return None;
    }
    let num: u32 = code[..3].parse().ok()?;
    let base = num * 10;
    let rest = &code[3..];
    let rest = rest.strip_prefix('.').unwrap_or(rest);
    if rest.is_empty() {
        return Some(CodeKey::Interval(base, base + 9));
    }
    if !rest.bytes().all(|b| b.is_ascii_digit()) || rest.len() > 2 {
        return None;
    }
    let sub = u32::from(rest.as_bytes()[0] - b'0');
    Some(CodeKey::Interval(base + sub, base + sub))
}

fn parse_code(code: &str, revision: IcdRevision) -> Option<CodeKey> {
    match revision {
        IcdRevision::Icd10 => parse_icd10(code),
        IcdRevision::Icd9 => parse_icd9(code),
    }
}

/// Parses one range bound such as `P01.1`, `Q`, `96` (letter inherited from
/// the lower bound) or `779.8`.
fn parse_bound(text: &str, revision: IcdRevision, letter_hint: Option<char>) -> Option<(u32, u32)> {
    match revision {
        IcdRevision::Icd10 => {
            if text.len() == 1 && text.as_bytes()[0].is_ascii_uppercase() {
                let letter = u32::from(text.as_bytes()[0] - b'A');
                return Some((letter * 1000, letter * 1000 + 999));
            }
            let full;
            let text = if text.as_bytes()[0].is_ascii_digit() {
                full = format!("{}{}", letter_hint?, text);
                full.as_str()
            } else {
                text
            };
            match parse_icd10(text)? {
                CodeKey::Interval(lo, hi) => Some((lo, hi)),
                CodeKey::Supplementary => None,
            }
        }
        IcdRevision::Icd9 => match parse_icd9(text)? {
            CodeKey::Interval(lo, hi) => Some((lo, hi)),
            CodeKey::Supplementary => None,
        },
    }
}

fn parse_row(
    revision: IcdRevision,
    category: IcdCategory,
    row: usize,
    text: &str,
) -> Vec<IcdRange> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (lo, hi) = match item.split_once('-') {
                Some((a, b)) => {
                    let hint = a.chars().next().filter(char::is_ascii_uppercase);
                    let (lo, _) = parse_bound(a, revision, None)
                        .unwrap_or_else(|| panic!("bad range bound {a}"));
                    let (_, hi) = parse_bound(b, revision, hint)
                        .unwrap_or_else(|| panic!("bad range bound {b}"));
                    (lo, hi)
                }
                None => parse_bound(item, revision, None)
                    .unwrap_or_else(|| panic!("bad range {item}")),
            };
            assert!(lo <= hi, "inverted range {item}");
            IcdRange {
                revision,
                category,
                row,
                text: item.to_string(),
                lo,
                hi,
            }
        })
        .collect()
}

impl IcdTable {
    /// The transcribed VR mapping table, ICD-10 and ICD-9.
    pub fn published() -> &'static IcdTable {
        static TABLE: OnceLock<IcdTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let mut ranges = Vec::new();
            for (row, (cat, text)) in ICD10_ROWS.iter().enumerate() {
                ranges.extend(parse_row(IcdRevision::Icd10, *cat, row, text));
            }
            for (row, (cat, text)) in ICD9_ROWS.iter().enumerate() {
                ranges.extend(parse_row(IcdRevision::Icd9, *cat, row, text));
            }
            IcdTable { ranges }
        })
    }

    pub fn ranges(&self) -> &[IcdRange] {
        &self.ranges
    }

    fn map_key(&self, revision: IcdRevision, key: u32) -> Option<Vec<IcdCategory>> {
        let mut best: Option<u32> = None;
        let mut cats: Vec<(usize, IcdCategory)> = Vec::new();
        for r in self
            .ranges
            .iter()
            .filter(|r| r.revision == revision && r.contains_key(key))
        {
            match best {
                Some(w) if r.width() > w => {}
                Some(w) if r.width() == w => cats.push((r.row, r.category)),
                _ => {
                    best = Some(r.width());
                    cats.clear();
                    cats.push((r.row, r.category));
                }
            }
        }
        if cats.is_empty() {
            return None;
        }
        cats.sort();
        let mut out: Vec<IcdCategory> = Vec::new();
        for (_, c) in cats {
            if !out.contains(&c) {
                out.push(c);
            }
        }
        Some(out)
    }

    /// Maps a code string to its category.
    pub fn map_code(&self, code: &str, revision: IcdRevision) -> Result<IcdMapping> {
        let normalised = code.trim().to_ascii_uppercase();
        if normalised.is_empty() {
            return Err(Error::validation("empty ICD code"));
        }
        let key = parse_code(&normalised, revision).ok_or_else(|| {
            Error::validation(format!("malformed {revision} code '{code}'"))
        })?;
        let (lo, hi) = match key {
            CodeKey::Supplementary => return Ok(IcdMapping::Unmapped),
            CodeKey::Interval(lo, hi) => (lo, hi),
        };
        let mut found: Vec<IcdCategory> = Vec::new();
        let mut conflict = false;
        for k in lo..=hi {
            if let Some(cats) = self.map_key(revision, k) {
                conflict |= cats.len() > 1;
                for c in cats {
                    if !found.contains(&c) {
                        found.push(c);
                    }
                }
            }
        }
        Ok(match found.len() {
            0 => IcdMapping::Unmapped,
            1 if !conflict => IcdMapping::from_category(found[0]),
            _ => {
                let rows = |c: &IcdCategory| {
                    self.ranges
                        .iter()
                        .filter(|r| r.revision == revision && r.category == *c)
                        .map(|r| r.row)
                        .min()
                        .unwrap_or(usize::MAX)
                };
                found.sort_by_key(rows);
                IcdMapping::Conflict(found)
            }
        })
    }

    /// Every pair of intersecting ranges with different categories.
    pub fn overlaps(&self) -> Vec<RangeOverlap> {
        let mut out = Vec::new();
        for (i, a) in self.ranges.iter().enumerate() {
            for b in &self.ranges[i + 1..] {
                if a.revision != b.revision || a.category == b.category {
                    continue;
                }
                if a.hi < b.lo || b.hi < a.lo {
                    continue;
                }
                let a_in_b = b.lo <= a.lo && a.hi <= b.hi;
                let b_in_a = a.lo <= b.lo && b.hi <= a.hi;
                let kind = if (a_in_b || b_in_a) && a.width() != b.width() {
                    OverlapKind::Nested
                } else {
                    OverlapKind::Conflict
                };
                out.push(RangeOverlap {
                    revision: a.revision,
                    first: a.text.clone(),
                    first_category: a.category,
                    second: b.text.clone(),
                    second_category: b.category,
                    kind,
                });
            }
        }
        out
    }
}

/// Maps a code using the published table.
pub fn map_icd_code(code: &str, revision: IcdRevision) -> Result<IcdMapping> {
    IcdTable::published().map_code(code, revision)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cause(code: &str, rev: u8) -> IcdMapping {
        map_icd_code(code, IcdRevision::try_from(rev).unwrap()).unwrap()
    }

    #[test]
    fn spot_codes() {
        assert_eq!(cause("P23", 10), IcdMapping::Cause(Cause::Pneumonia));
        assert_eq!(cause("P92", 10), IcdMapping::Excluded);
        assert_eq!(cause("Q24.0", 10), IcdMapping::Cause(Cause::Congenital));
        assert_eq!(cause("q240", 10), IcdMapping::Cause(Cause::Congenital));
        assert_eq!(cause("P01.1", 10), IcdMapping::Cause(Cause::Preterm));
        assert_eq!(cause("P01.2", 10), IcdMapping::Cause(Cause::Other));
        assert_eq!(cause("P96.8", 10), IcdMapping::Excluded);
    }

    #[test]
    fn p07_is_reported_as_conflict_in_row_order() {
        assert_eq!(
            cause("P07.3", 10),
            IcdMapping::Conflict(vec![
                IcdCategory::Cause(Cause::Preterm),
                IcdCategory::Cause(Cause::Intrapartum)
            ])
        );
    }

    #[test]
    fn three_character_code_spanning_categories_is_ambiguous() {
        match cause("P01", 10) {
            IcdMapping::Conflict(c) => assert_eq!(c.len(), 3),
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn icd9_exceptions_inside_exclusion_block() {
        assert_eq!(cause("780.6", 9), IcdMapping::Cause(Cause::Sepsis));
        assert_eq!(cause("785.4", 9), IcdMapping::Cause(Cause::Sepsis));
        assert_eq!(cause("786.3", 9), IcdMapping::Cause(Cause::Preterm));
        assert_eq!(cause("795.2", 9), IcdMapping::Cause(Cause::Congenital));
        assert_eq!(cause("790.1", 9), IcdMapping::Excluded);
        assert_eq!(cause("205.9", 9), IcdMapping::Excluded);
        assert_eq!(cause("205.0", 9), IcdMapping::Cause(Cause::Other));
    }

    #[test]
    fn supplementary_and_uncovered_codes_are_unmapped() {
        assert_eq!(cause("V30", 9), IcdMapping::Unmapped);
        assert_eq!(cause("Z38.0", 10), IcdMapping::Unmapped);
        assert_eq!(cause("P75", 10), IcdMapping::Unmapped);
    }

    #[test]
    fn malformed_codes_error() {
        for bad in ["", "P2", "12A", "PP1", "P23.x", "77"] {
            assert!(
                map_icd_code(bad, IcdRevision::Icd10).is_err(),
                "{bad} should be rejected"
            );
        }
        assert!(map_icd_code("7a0", IcdRevision::Icd9).is_err());
    }

    #[test]
    fn only_p07_conflicts() {
        let conflicts: Vec<_> = IcdTable::published()
            .overlaps()
            .into_iter()
            .filter(|o| o.kind == OverlapKind::Conflict)
            .collect();
        assert_eq!(conflicts.len(), 1, "{conflicts:?}");
        assert_eq!(conflicts[0].first, "P07");
    }

    #[test]
    fn every_range_maps_to_cause_or_excluded() {
        let table = IcdTable::published();
        for r in table.ranges() {
            for key in r.lo..=r.hi {
                let cats = table.map_key(r.revision, key).expect("covered");
                assert!(!cats.is_empty());
            }
        }
    }
}
