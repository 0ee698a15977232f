//! Covariate expansions and range capping.
//!
//! A covariate enters a log-cause ratio as one of four forms. Expanded term
//! names follow the coefficient-file convention: `x` for the linear part,
//! `x_Q` for the square, and `x_S1`, `x_S2`, ... for spline terms, where
//! `x_S1` is the linear part.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Linear,
    Quadratic,
    /// Restricted cubic spline with `terms + 1` knots. `knots` is empty when
    /// the locations are unknown (coefficients read from a file without
    /// them); such a term cannot be evaluated until knots are supplied.
    Spline {
        terms: usize,
        #[serde(default)]
        knots: Vec<f64>,
    },
    Binary,
}

impl Transform {
    pub fn spline(knots: Vec<f64>) -> Result<Self> {
        validate_knots(&knots)?;
        Ok(Transform::Spline {
            terms: knots.len() - 1,
            knots,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Transform::Linear => "linear",
            Transform::Quadratic => "quadratic",
            Transform::Spline { .. } => "spline",
            Transform::Binary => "binary",
        }
    }

    /// Number of design columns the form produces.
    pub fn width(&self) -> usize {
        match self {
            Transform::Linear | Transform::Binary => 1,
            Transform::Quadratic => 2,
            Transform::Spline { terms, .. } => *terms,
        }
    }

    /// Rank used for tie-breaking: simpler forms first.
    pub fn complexity(&self) -> usize {
        match self {
            Transform::Binary | Transform::Linear => 0,
            Transform::Quadratic => 1,
            Transform::Spline { .. } => 2,
        }
    }

    pub fn term_names(&self, name: &str) -> Vec<String> {
        match self {
            Transform::Linear | Transform::Binary => vec![name.to_string()],
            Transform::Quadratic => vec![name.to_string(), format!("{name}_Q")],
            Transform::Spline { terms, .. } => (1..=*terms).map(|i| format!("{name}_S{i}")).collect(),
        }
    }

    pub fn has_unresolved_knots(&self) -> bool {
        matches!(self, Transform::Spline { knots, .. } if knots.is_empty())
    }

    /// Appends the expansion of `x` to `row`.
    pub fn expand_into(&self, name: &str, x: f64, row: &mut Vec<f64>) -> Result<()> {
        match self {
            Transform::Linear => row.push(x),
            Transform::Quadratic => {
                row.push(x);
                row.push(x * x);
            }
            Transform::Binary => {
                if x != 0.0 && x != 1.0 {
                    return Err(Error::validation(format!(
                        "binary covariate '{name}' has value {x}"
                    )));
                }
                row.push(x);
            }
            Transform::Spline { terms, knots } => {
                if knots.is_empty() {
                    return Err(Error::validation(format!(
                        "spline knots for '{name}' are unknown; supply them before evaluating"
                    )));
                }
                if knots.len() != terms + 1 {
                    return Err(Error::validation(format!(
                        "spline for '{name}' has {} knots but {terms} terms",
                        knots.len()
                    )));
                }
                row.extend(rcs_basis(x, knots)?);
            }
        }
        Ok(())
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Spline { terms, .. } => write!(f, "spline({})", terms + 1),
            other => f.write_str(other.kind()),
        }
    }
}

fn validate_knots(knots: &[f64]) -> Result<()> {
    if knots.len() < 3 {
        return Err(Error::validation(format!(
            "restricted cubic spline needs at least 3 knots, got {}",
            knots.len()
        )));
    }
    if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(format!(
            "spline knots must be finite and strictly increasing: {knots:?}"
        )));
    }
    Ok(())
}

/// Restricted cubic spline basis: `x` followed by `knots.len() - 2`
/// truncated-power terms, linear beyond the outer knots.
///
/// Term `j` is
/// `[(x-k_j)+^3 - (x-k_{n-1})+^3 (k_n-k_j)/(k_n-k_{n-1}) + (x-k_n)+^3 (k_{n-1}-k_j)/(k_n-k_{n-1})] / (k_n-k_1)^2`.
pub fn rcs_basis(x: f64, knots: &[f64]) -> Result<Vec<f64>> {
    validate_knots(knots)?;
    let n = knots.len();
    let (k1, kn1, kn) = (knots[0], knots[n - 2], knots[n - 1]);
    let norm = (kn - k1) * (kn - k1);
    let cube = |d: f64| if d > 0.0 { d * d * d } else { 0.0 };
    let tail1 = cube(x - kn1);
    let tail2 = cube(x - kn);
    let mut out = Vec::with_capacity(n - 1);
    out.push(x);
    for &kj in &knots[..n - 2] {
        let v = cube(x - kj) - tail1 * (kn - kj) / (kn - kn1) + tail2 * (kn1 - kj) / (kn - kn1);
        out.push(v / norm);
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted data, `p` in [0, 1]
/// (position `(n-1)p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Conventional knot percentiles for a given knot count.
pub fn default_knot_percentiles(n_knots: usize) -> Result<&'static [f64]> {
    match n_knots {
        3 => Ok(&[0.10, 0.50, 0.90]),
        4 => Ok(&[0.05, 0.35, 0.65, 0.95]),
        5 => Ok(&[0.05, 0.275, 0.50, 0.725, 0.95]),
        n => Err(Error::validation(format!("no default knot placement for {n} knots"))),
    }
}

/// Knots at the conventional quantiles of `values`. Fails when ties make the
/// knots non-increasing.
pub fn knots_from_quantiles(values: &[f64], n_knots: usize) -> Result<Vec<f64>> {
    let ps = default_knot_percentiles(n_knots)?;
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Err(Error::validation("no finite values to place knots"));
    }
    sorted.sort_by(f64::total_cmp);
    let knots: Vec<f64> = ps.iter().map(|&p| quantile_sorted(&sorted, p)).collect();
    validate_knots(&knots)?;
    Ok(knots)
}

/// Design row for `spec`, in spec order. No intercept column.
pub fn expand(covariates: &BTreeMap<String, f64>, spec: &[(String, Transform)]) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(spec.iter().map(|(_, t)| t.width()).sum());
    for (name, t) in spec {
        let x = *covariates
            .get(name)
            .ok_or_else(|| Error::MissingCovariate(name.clone()))?;
        t.expand_into(name, x, &mut row)?;
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl CovariateRange {
    pub fn new(name: impl Into<String>, min: f64, max: f64) -> Result<Self> {
        let name = name.into();
        if !(min <= max) {
            return Err(Error::validation(format!(
                "range for '{name}' has min {min} > max {max}"
            )));
        }
        Ok(CovariateRange { name, min, max })
    }

    /// Range of the finite values in `values`.
    pub fn from_values(name: impl Into<String>, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let name = name.into();
        let (min, max) = values
            .into_iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if min > max {
            return Err(Error::MissingData(format!("no values for covariate '{name}'")));
        }
        Ok(CovariateRange { name, min, max })
    }

    pub fn contains(&self, value: f64) -> bool {
        self.min <= value && value <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapMode {
    #[default]
    Cap,
    Passthrough,
}

pub fn cap_to_range(value: f64, range: &CovariateRange, mode: CapMode) -> f64 {
    match mode {
        CapMode::Cap => value.clamp(range.min, range.max),
        CapMode::Passthrough => value,
    }
}
