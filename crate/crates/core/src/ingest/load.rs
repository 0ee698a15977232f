//! CSV loaders with schema checks. Hard schema violations stop the load
//! with file, line and column; softer problems go to the issue report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use csv::StringRecord;

use super::icd::IcdRevision;
use super::issues::IssueReport;
use super::vr::VrRecord;
use super::{Cell, CovariatePanel, EstimationMethod, GroupAssignment, ObservationRecord, MIN_STUDY_DEATHS};
use crate::cause::{Cause, Period};
use crate::envelope::{EnvelopeRecord, EnvelopeUnits, Membership};
use crate::error::{Error, Result};

/// A parsed CSV file with header lookup and located field access.
pub struct CsvTable {
    file: String,
    headers: Vec<String>,
    rows: Vec<(u64, StringRecord)>,
}

impl CsvTable {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_named(&path.display().to_string(), &text)
    }

    /// Parses `text`. Lines starting with `#` are comments.
    pub fn from_str_named(file: &str, text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|source| Error::Csv {
                file: file.to_string(),
                source,
            })?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|source| Error::Csv {
                file: file.to_string(),
                source,
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(CsvTable {
            file: file.to_string(),
            headers,
            rows,
        })
    }

    pub fn file(&self) -> &str {
        &self.file
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.rows.iter().map(move |(line, rec)| Row {
            table: self,
            line: *line,
            rec,
        })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn require_columns(&self, names: &[&str]) -> Result<()> {
        for name in names {
            if self.column(name).is_none() {
                return Err(Error::Schema {
                    file: self.file.clone(),
                    line: 1,
                    column: name.to_string(),
                    message: "required column is missing".into(),
                });
            }
        }
        Ok(())
    }
}

pub struct Row<'a> {
    table: &'a CsvTable,
    pub line: u64,
    rec: &'a StringRecord,
}

impl Row<'_> {
    pub fn error(&self, column: &str, message: impl Into<String>) -> Error {
        Error::Schema {
            file: self.table.file.clone(),
            line: self.line,
            column: column.to_string(),
            message: message.into(),
        }
    }

    /// Raw text of a column; empty when the column is absent.
    pub fn raw(&self, column: &str) -> &str {
        self.table
            .column(column)
            .and_then(|i| self.rec.get(i))
            .unwrap_or("")
    }

    pub fn text(&self, column: &str) -> Result<String> {
        let v = self.raw(column);
        if v.is_empty() {
            return Err(self.error(column, "value is empty"));
        }
        Ok(v.to_string())
    }

    pub fn parse<T: FromStr>(&self, column: &str) -> Result<T> {
        let v = self.raw(column);
        v.parse()
            .map_err(|_| self.error(column, format!("cannot parse '{v}'")))
    }

    /// `None` for a blank field.
    pub fn parse_opt<T: FromStr>(&self, column: &str) -> Result<Option<T>> {
        if self.raw(column).is_empty() {
            Ok(None)
        } else {
            self.parse(column).map(Some)
        }
    }

    pub fn finite(&self, column: &str) -> Result<f64> {
        let v: f64 = self.parse(column)?;
        if !v.is_finite() {
            return Err(self.error(column, "value is not finite"));
        }
        Ok(v)
    }
}

fn parse_period(row: &Row<'_>) -> Result<Period> {
    row.raw("period")
        .parse()
        .map_err(|e: Error| row.error("period", e.to_string()))
}

/// Study observations: one count column per cause (blank = unreported).
pub fn parse_observations(table: &CsvTable) -> Result<(Vec<ObservationRecord>, IssueReport)> {
    table.require_columns(&["unit_id", "year", "period", "total_deaths"])?;
    let cause_cols: Vec<(Cause, &str)> = Cause::ALL
        .iter()
        .filter_map(|&c| table.column(c.as_str()).map(|_| (c, c.as_str())))
        .collect();
    if cause_cols.is_empty() {
        return Err(Error::Schema {
            file: table.file().to_string(),
            line: 1,
            column: "<cause>".into(),
            message: "no cause count columns".into(),
        });
    }
    let mut issues = IssueReport::default();
    let mut out = Vec::new();
    let mut keys = BTreeSet::new();
    for row in table.rows() {
        let unit_id = row.text("unit_id")?;
        let year: i32 = row.parse("year")?;
        let period = parse_period(&row)?;
        let total_deaths: u64 = row.parse("total_deaths")?;
        let source = row.raw("source").to_string();
        let mut cells = Vec::new();
        for &(cause, col) in &cause_cols {
            if let Some(n) = row.parse_opt::<u64>(col)? {
                cells.push(Cell::single(cause, n));
            }
        }
        let sum: u64 = cells.iter().map(|c| c.deaths).sum();
        if sum != total_deaths {
            return Err(row.error(
                "total_deaths",
                format!("cause counts sum to {sum} but total_deaths is {total_deaths}"),
            ));
        }
        if !keys.insert((unit_id.clone(), year, period, source.clone())) {
            return Err(row.error("unit_id", format!("duplicate observation {unit_id} {year} {period}")));
        }
        if total_deaths < MIN_STUDY_DEATHS {
            issues.warn(
                table.file(),
                row.line,
                "min_deaths",
                format!("{unit_id} {year} {period} has {total_deaths} deaths, below {MIN_STUDY_DEATHS}"),
            );
        }
        out.push(ObservationRecord {
            unit_id,
            year,
            period,
            cells,
            total_deaths,
            covariates: BTreeMap::new(),
            source,
        });
    }
    Ok((out, issues))
}

pub fn parse_vr(table: &CsvTable) -> Result<Vec<VrRecord>> {
    table.require_columns(&["country", "year", "period", "icd_revision", "code", "deaths"])?;
    let mut out = Vec::new();
    let mut keys = BTreeSet::new();
    let mut revisions: BTreeMap<(String, i32, Period), IcdRevision> = BTreeMap::new();
    for row in table.rows() {
        let country = row.text("country")?;
        let year: i32 = row.parse("year")?;
        let period = parse_period(&row)?;
        if period == Period::Overall {
            return Err(row.error("period", "VR rows must be early or late"));
        }
        let rev: u8 = row.parse("icd_revision")?;
        let icd_revision =
            IcdRevision::try_from(rev).map_err(|e| row.error("icd_revision", e.to_string()))?;
        let code = row.text("code")?;
        let deaths: u64 = row.parse("deaths")?;
        let key = (country.clone(), year, period);
        if let Some(prev) = revisions.insert(key.clone(), icd_revision) {
            if prev != icd_revision {
                return Err(row.error("icd_revision", format!("{country} {year} {period} mixes ICD revisions")));
            }
        }
        if !keys.insert((key, code.to_ascii_uppercase())) {
            return Err(row.error("code", format!("duplicate VR row for {country} {year} {period} code {code}")));
        }
        out.push(VrRecord {
            country,
            year,
            period,
            icd_revision,
            code,
            deaths,
        });
    }
    Ok(out)
}

/// Long-format covariates. Rows with unparseable values are rejected and
/// reported; duplicate keys are a hard error.
pub fn parse_covariates(table: &CsvTable) -> Result<(CovariatePanel, IssueReport)> {
    table.require_columns(&["unit_id", "year", "covariate", "value"])?;
    let mut panel = CovariatePanel::default();
    let mut issues = IssueReport::default();
    for row in table.rows() {
        let unit = row.text("unit_id")?;
        let year: i32 = row.parse("year")?;
        let name = row.text("covariate")?;
        let value = match row.raw("value").parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                issues.reject(
                    table.file(),
                    row.line,
                    "non_numeric_value",
                    format!("{unit} {year} {name}: value '{}' is not a finite number", row.raw("value")),
                );
                continue;
            }
        };
        if panel.insert(&unit, year, &name, value).is_some() {
            return Err(row.error("covariate", format!("duplicate covariate {unit} {year} {name}")));
        }
    }
    Ok((panel, issues))
}

pub fn parse_groups(table: &CsvTable) -> Result<Vec<GroupAssignment>> {
    table.require_columns(&["country", "method"])?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in table.rows() {
        let country = row.text("country")?;
        let method: EstimationMethod = row
            .raw("method")
            .parse()
            .map_err(|e: Error| row.error("method", e.to_string()))?;
        if !seen.insert(country.clone()) {
            return Err(row.error("country", format!("{country} is assigned more than once")));
        }
        out.push(GroupAssignment { country, method });
    }
    Ok(out)
}

/// Reads the optional `# units: ...` declaration on the first line.
fn declared_units(file: &str, text: &str) -> Result<EnvelopeUnits> {
    let first = text.lines().next().unwrap_or("").trim();
    match first.strip_prefix('#') {
        Some(rest) => match rest.trim().strip_prefix("units:") {
            Some(u) => u.trim().parse().map_err(|e: Error| Error::Schema {
                file: file.to_string(),
                line: 1,
                column: "# units".into(),
                message: e.to_string(),
            }),
            None => Ok(EnvelopeUnits::Counts),
        },
        None => Ok(EnvelopeUnits::Counts),
    }
}

/// Envelopes, normalised to counts.
pub fn parse_envelopes(file: &str, text: &str) -> Result<Vec<EnvelopeRecord>> {
    let units = declared_units(file, text)?;
    let table = CsvTable::from_str_named(file, text)?;
    table.require_columns(&["unit_id", "year", "neonatal_deaths", "live_births"])?;
    let scale = units.multiplier();
    let mut keys = BTreeSet::new();
    let mut out = Vec::new();
    for row in table.rows() {
        let unit_id = row.text("unit_id")?;
        let year: i32 = row.parse("year")?;
        let deaths = row.finite("neonatal_deaths")?;
        if deaths < 0.0 {
            return Err(row.error("neonatal_deaths", "must be nonnegative"));
        }
        let births = row.finite("live_births")?;
        if births <= 0.0 {
            return Err(row.error("live_births", "must be positive"));
        }
        let share: Option<f64> = row.parse_opt("observed_early_share")?;
        if let Some(s) = share {
            if !(0.0..=1.0).contains(&s) {
                return Err(row.error("observed_early_share", "must lie in [0, 1]"));
            }
        }
        if !keys.insert((unit_id.clone(), year)) {
            return Err(row.error("unit_id", format!("duplicate envelope {unit_id} {year}")));
        }
        out.push(EnvelopeRecord {
            unit_id,
            year,
            neonatal_deaths: deaths * scale,
            live_births: births * scale,
            observed_early_share: share,
        });
    }
    Ok(out)
}

pub fn parse_membership(table: &CsvTable) -> Result<Vec<Membership>> {
    table.require_columns(&["unit_id"])?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in table.rows() {
        let unit_id = row.text("unit_id")?;
        if !seen.insert(unit_id.clone()) {
            return Err(row.error("unit_id", format!("{unit_id} listed more than once")));
        }
        let opt = |col: &str| {
            let v = row.raw(col);
            (!v.is_empty()).then(|| v.to_string())
        };
        out.push(Membership {
            unit_id,
            mdg_region: opt("mdg_region"),
            income_group: opt("income_group"),
            india_state_of: opt("india_state_of"),
        });
    }
    Ok(out)
}

pub fn load_observations(path: &Path) -> Result<(Vec<ObservationRecord>, IssueReport)> {
    parse_observations(&CsvTable::from_path(path)?)
}

pub fn load_vr(path: &Path) -> Result<Vec<VrRecord>> {
    parse_vr(&CsvTable::from_path(path)?)
}

pub fn load_covariates(path: &Path) -> Result<(CovariatePanel, IssueReport)> {
    parse_covariates(&CsvTable::from_path(path)?)
}

pub fn load_groups(path: &Path) -> Result<Vec<GroupAssignment>> {
    parse_groups(&CsvTable::from_path(path)?)
}

pub fn load_envelopes(path: &Path) -> Result<Vec<EnvelopeRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_envelopes(&path.display().to_string(), &text)
}

pub fn load_membership(path: &Path) -> Result<Vec<Membership>> {
    parse_membership(&CsvTable::from_path(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> CsvTable {
        CsvTable::from_str_named("t.csv", text).unwrap()
    }

    #[test]
    fn non_numeric_covariate_rejected_and_reported() {
        let t = table("unit_id,year,covariate,value\nA,2000,NMR,12\nA,2001,NMR,n/a\n");
        let (panel, issues) = parse_covariates(&t).unwrap();
        assert_eq!(panel.get("A", 2000).unwrap()["NMR"], 12.0);
        assert!(panel.get("A", 2001).is_none());
        assert_eq!(issues.len(), 1);
        assert_eq!(issues.issues[0].line, 3);
    }

    #[test]
    fn observation_sum_mismatch_is_hard_error() {
        let t = table(
            "unit_id,year,period,preterm,intrapartum,other,total_deaths,source\n\
             S1,2001,early,10,20,5,40,x\n",
        );
        match parse_observations(&t).unwrap_err() {
            Error::Schema { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, "total_deaths");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn blank_counts_are_unreported() {
        let t = table(
            "unit_id,year,period,preterm,intrapartum,pneumonia,other,total_deaths\n\
             S1,2001,early,10,20,,5,35\n",
        );
        let (obs, issues) = parse_observations(&t).unwrap();
        assert_eq!(obs[0].cells.len(), 3);
        assert!(issues.is_empty());
    }

    #[test]
    fn duplicate_vr_row_is_hard_error() {
        let t = table(
            "country,year,period,icd_revision,code,deaths\n\
             A,2000,early,10,P21,3\nA,2000,early,10,P21,4\n",
        );
        assert!(matches!(parse_vr(&t).unwrap_err(), Error::Schema { line: 3, .. }));
    }

    #[test]
    fn envelope_units_scale_to_counts() {
        let env = parse_envelopes(
            "e.csv",
            "# units: thousands\nunit_id,year,neonatal_deaths,live_births\nA,2013,2.5,100\n",
        )
        .unwrap();
        assert_eq!(env[0].neonatal_deaths, 2500.0);
        assert_eq!(env[0].live_births, 100_000.0);
    }

    #[test]
    fn groups_must_be_unique() {
        let t = table("country,method\nA,vr\nA,high_mortality_model\n");
        assert!(parse_groups(&t).is_err());
    }
}
