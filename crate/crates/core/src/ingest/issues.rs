use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// Row kept; something about it deserves attention.
    Warning,
    /// Row dropped from the tables.
    Rejected,
}

/// One flagged or dropped input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub file: String,
    pub line: u64,
    pub rule: String,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueReport {
    pub issues: Vec<Issue>,
}

impl IssueReport {
    pub fn warn(&mut self, file: &str, line: u64, rule: &str, message: impl Into<String>) {
        self.push(file, line, rule, Severity::Warning, message.into());
    }

    pub fn reject(&mut self, file: &str, line: u64, rule: &str, message: impl Into<String>) {
        self.push(file, line, rule, Severity::Rejected, message.into());
    }

    fn push(&mut self, file: &str, line: u64, rule: &str, severity: Severity, message: String) {
        self.issues.push(Issue {
            file: file.to_string(),
            line,
            rule: rule.to_string(),
            severity,
            message,
        });
    }

    pub fn extend(&mut self, other: IssueReport) {
        self.issues.extend(other.issues);
    }

    pub fn len(&self) -> usize {
        self.issues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter()
    }

    /// Newline-delimited JSON, one issue per line.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for issue in &self.issues {
            let line = serde_json::to_string(issue).map_err(|source| Error::Json {
                context: "issue report".into(),
                source,
            })?;
            writeln!(w, "{line}").map_err(|e| Error::io("issue report", e))?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}
