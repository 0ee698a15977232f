//! Text form of coefficient listings: `name (value); name (value); const (value)`.

use std::collections::BTreeMap;

use super::{Coefficient, CoefficientSet, EquationCoefficients};
use crate::cause::{Cause, CauseSet, ModelFamily, Period};
use crate::error::{Error, Result};

const PUBLISHED: &str = include_str!("../../fixtures/published_coefficients.tsv");

fn superscript_to_ascii(c: char) -> Option<char> {
    Some(match c {
        '⁰' => '0',
        '¹' => '1',
        '²' => '2',
        '³' => '3',
        '⁴' => '4',
        '⁵' => '5',
        '⁶' => '6',
        '⁷' => '7',
        '⁸' => '8',
        '⁹' => '9',
        '⁻' | '−' => '-',
        '⁺' => '+',
        _ => return None,
    })
}

/// Parses `-0.018`, `1e-5` or `-2.6x10 ⁻⁵` / `-2.6x10^-5`.
fn parse_value(text: &str) -> Result<f64> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| superscript_to_ascii(c).unwrap_or(c))
        .collect();
    let lower = cleaned.to_ascii_lowercase();
    let value = match lower.split_once("x10").or_else(|| lower.split_once("×10")) {
        Some((mantissa, exp)) => {
            let exp = exp.trim_start_matches('^');
            let m: f64 = mantissa.parse().map_err(|_| bad_value(text))?;
            let e: i32 = exp.parse().map_err(|_| bad_value(text))?;
            format!("{m}e{e}").parse::<f64>().map_err(|_| bad_value(text))?
        }
        None => lower.parse().map_err(|_| bad_value(text))?,
    };
    if !value.is_finite() {
        return Err(bad_value(text));
    }
    Ok(value)
}

fn bad_value(text: &str) -> Error {
    Error::validation(format!("cannot read coefficient value '{text}'"))
}

/// Parses one equation listing. A term without parentheses has no value.
pub fn parse_equation(text: &str) -> Result<Vec<Coefficient>> {
    let mut out = Vec::new();
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value, literal) = match part.split_once('(') {
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::validation(format!("unbalanced parentheses in '{part}'")))?
                    .trim();
                (name.trim(), Some(parse_value(inner)?), Some(inner.to_string()))
            }
            None => (part, None, None),
        };
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::validation(format!("bad term name in '{part}'")));
        }
        if out.iter().any(|c: &Coefficient| c.name == name) {
            return Err(Error::validation(format!("term '{name}' listed twice")));
        }
        out.push(Coefficient {
            name: name.to_string(),
            value,
            literal,
        });
    }
    if out.is_empty() {
        return Err(Error::validation("empty coefficient listing"));
    }
    Ok(out)
}

/// Inverse of [`parse_equation`]. Source literals are reproduced as read;
/// computed values are written in shortest round-trip form.
pub fn format_equation(terms: &[Coefficient]) -> String {
    terms
        .iter()
        .map(|c| match (&c.literal, c.value) {
            (Some(lit), _) => format!("{} ({lit})", c.name),
            (None, Some(v)) => format!("{} ({v})", c.name),
            (None, None) => c.name.clone(),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn parse_family(s: &str) -> Result<ModelFamily> {
    match s {
        "low_mortality" => Ok(ModelFamily::LowMortality),
        "high_mortality" => Ok(ModelFamily::HighMortality),
        other => Err(Error::validation(format!("unknown model family '{other}'"))),
    }
}

/// A tab-separated file of equation listings, one per
/// (family, period, ratio cause).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFile {
    pub sets: Vec<CoefficientSet>,
}

impl CoefficientFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut grouped: BTreeMap<(ModelFamily, Period), BTreeMap<Cause, Vec<Coefficient>>> =
            BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let ctx = |e: Error| Error::validation(format!("coefficient file line {}: {e}", i + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(ctx(Error::validation("expected 4 tab-separated fields")));
            }
            let family = parse_family(fields[0].trim()).map_err(ctx)?;
            let period: Period = fields[1].trim().parse().map_err(ctx)?;
            let cause: Cause = fields[2].trim().parse().map_err(ctx)?;
            let terms = parse_equation(fields[3]).map_err(ctx)?;
            if grouped
                .entry((family, period))
                .or_default()
                .insert(cause, terms)
                .is_some()
            {
                return Err(ctx(Error::validation(format!(
                    "{family} {period} {cause} listed twice"
                ))));
            }
        }
        let mut sets = Vec::new();
        for ((family, period), mut eqs) in grouped {
            let set = CauseSet::for_family(family);
            let mut equations = Vec::new();
            for cause in set.ratios() {
                let terms = eqs.remove(&cause).ok_or_else(|| {
                    Error::validation(format!("{family} {period}: no equation for {cause}"))
                })?;
                equations.push(EquationCoefficients { cause, terms });
            }
            if let Some(extra) = eqs.keys().next() {
                return Err(Error::validation(format!(
                    "{family} {period}: {extra} is not a ratio of this model"
                )));
            }
            sets.push(CoefficientSet {
                family,
                period,
                equations,
            });
        }
        Ok(CoefficientFile { sets })
    }

    pub fn format(&self) -> String {
        let mut out = String::from("# family\tperiod\tratio\tterms\n");
        for set in &self.sets {
            for eq in &set.equations {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    set.family,
                    set.period,
                    eq.cause,
                    format_equation(&eq.terms)
                ));
            }
        }
        out
    }

    pub fn get(&self, family: ModelFamily, period: Period) -> Option<&CoefficientSet> {
        self.sets
            .iter()
            .find(|s| s.family == family && s.period == period)
    }
}

/// The shipped coefficient listing for both models and both periods.
pub fn published_coefficients() -> CoefficientFile {
    CoefficientFile::parse(PUBLISHED).expect("shipped coefficient file parses")
}
