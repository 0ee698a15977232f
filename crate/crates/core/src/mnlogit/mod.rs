//! Weighted grouped-multinomial logit.
//!
//! Each non-baseline cause has its own equation (its log ratio to the
//! baseline cause) with its own covariate list. Observations may report
//! composite cells; a cell contributes the log of the summed probabilities
//! of its member causes.

mod data;
mod fit;
mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::basis::{knots_from_quantiles, Transform};
use crate::cause::{Cause, CauseDistribution, CauseSet, ModelFamily, Period};
use crate::error::{Error, Result};
use crate::ingest::ObservationRecord;

pub use data::{observation_weight, ModelData};
pub use fit::{fit, fit_data, FitOptions, FitResult};
pub use text::{format_equation, parse_equation, published_coefficients, CoefficientFile};

/// Name of the intercept term in coefficient listings.
pub const INTERCEPT: &str = "const";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTerm {
    pub name: String,
    pub transform: Transform,
}

impl CovariateTerm {
    pub fn new(name: impl Into<String>, transform: Transform) -> Self {
        CovariateTerm {
            name: name.into(),
            transform,
        }
    }
}

/// Covariates of one log-cause ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationSpec {
    pub cause: Cause,
    pub terms: Vec<CovariateTerm>,
}

impl EquationSpec {
    pub fn width(&self) -> usize {
        self.terms.iter().map(|t| t.transform.width()).sum()
    }

    /// Expanded term names without the intercept.
    pub fn term_names(&self) -> Vec<String> {
        self.terms
            .iter()
            .flat_map(|t| t.transform.term_names(&t.name))
            .collect()
    }
}

/// Structure of a multinomial model for one period.
///
/// A term named after the period (`early` or `late`) is the period dummy:
/// 1 for observations specific to that period, 0 for observations covering
/// the whole neonatal period, and 1 at prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub cause_set: CauseSet,
    pub period: Period,
    pub equations: Vec<EquationSpec>,
}

impl ModelSpec {
    /// Intercept-only model over `cause_set`.
    pub fn intercept_only(cause_set: CauseSet, period: Period) -> Self {
        let equations = cause_set
            .ratios()
            .map(|cause| EquationSpec {
                cause,
                terms: Vec::new(),
            })
            .collect();
        ModelSpec {
            cause_set,
            period,
            equations,
        }
    }

    /// Same covariates in every equation.
    pub fn shared(cause_set: CauseSet, period: Period, terms: Vec<CovariateTerm>) -> Self {
        let mut spec = Self::intercept_only(cause_set, period);
        for eq in &mut spec.equations {
            eq.terms = terms.clone();
        }
        spec
    }

    pub fn equation(&self, cause: Cause) -> Option<&EquationSpec> {
        self.equations.iter().find(|e| e.cause == cause)
    }

    pub fn equation_mut(&mut self, cause: Cause) -> Option<&mut EquationSpec> {
        self.equations.iter_mut().find(|e| e.cause == cause)
    }

    pub fn period_dummy_name(&self) -> Option<&'static str> {
        match self.period {
            Period::Overall => None,
            p => Some(p.as_str()),
        }
    }

    pub fn includes_period_dummy(&self) -> bool {
        self.period_dummy_name()
            .is_some_and(|d| self.equations.iter().any(|e| e.terms.iter().any(|t| t.name == d)))
    }

    /// Names of covariates the model reads, without the period dummy.
    pub fn covariate_names(&self) -> Vec<String> {
        let dummy = self.period_dummy_name();
        let mut names: Vec<String> = self
            .equations
            .iter()
            .flat_map(|e| e.terms.iter().map(|t| t.name.clone()))
            .filter(|n| Some(n.as_str()) != dummy)
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Number of free parameters, intercepts included.
    pub fn n_params(&self) -> usize {
        self.equations.iter().map(|e| e.width() + 1).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let expected: Vec<Cause> = self.cause_set.ratios().collect();
        let got: Vec<Cause> = self.equations.iter().map(|e| e.cause).collect();
        if expected != got {
            return Err(Error::validation(format!(
                "model equations {got:?} do not match the non-baseline causes {expected:?}"
            )));
        }
        for eq in &self.equations {
            let mut names = eq.term_names();
            names.sort();
            if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| n == INTERCEPT) {
                return Err(Error::validation(format!(
                    "equation for {} repeats a term or uses the reserved name '{INTERCEPT}'",
                    eq.cause
                )));
            }
        }
        Ok(())
    }

    pub fn has_unresolved_knots(&self) -> bool {
        self.equations
            .iter()
            .any(|e| e.terms.iter().any(|t| t.transform.has_unresolved_knots()))
    }

    /// Places missing spline knots at the conventional quantiles of each
    /// covariate across `data`. Knots already present are kept.
    pub fn resolve_knots(&mut self, data: &[ObservationRecord]) -> Result<()> {
        for eq in &mut self.equations {
            for term in &mut eq.terms {
                if let Transform::Spline { terms, knots } = &mut term.transform {
                    if knots.is_empty() {
                        let values: Vec<f64> = data
                            .iter()
                            .filter_map(|o| o.covariates.get(&term.name).copied())
                            .collect();
                        *knots = knots_from_quantiles(&values, *terms + 1)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Structure implied by a coefficient listing: `x` alone is linear,
    /// `x` with `x_Q` quadratic, `x_S1..x_Sm` a spline with unknown knots,
    /// `reg_*` and the period name binary.
    pub fn from_coefficients(coef: &CoefficientSet) -> Result<Self> {
        let cause_set = CauseSet::for_family(coef.family);
        let dummy = coef.period.as_str();
        let mut equations = Vec::new();
        for eq in &coef.equations {
            let mut terms: Vec<CovariateTerm> = Vec::new();
            for c in &eq.terms {
                if c.name == INTERCEPT {
                    continue;
                }
                if let Some(base) = c.name.strip_suffix("_Q") {
                    match terms.last_mut() {
                        Some(t) if t.name == base && t.transform == Transform::Linear => {
                            t.transform = Transform::Quadratic;
                            continue;
                        }
                        _ => {
                            return Err(Error::validation(format!(
                                "term '{}' in the {} equation does not follow '{base}'",
                                c.name, eq.cause
                            )))
                        }
                    }
                }
                if let Some((base, idx)) = spline_part(&c.name) {
                    if idx == 1 {
                        terms.push(CovariateTerm::new(
                            base,
                            Transform::Spline {
                                terms: 1,
                                knots: Vec::new(),
                            },
                        ));
                        continue;
                    }
                    match terms.last_mut() {
                        Some(CovariateTerm {
                            name,
                            transform: Transform::Spline { terms: n, .. },
                        }) if name == base && *n + 1 == idx => {
                            *n += 1;
                            continue;
                        }
                        _ => {
                            return Err(Error::validation(format!(
                                "spline term '{}' in the {} equation is out of sequence",
                                c.name, eq.cause
                            )))
                        }
                    }
                }
                let transform = if c.name.starts_with("reg_") || c.name == dummy {
                    Transform::Binary
                } else {
                    Transform::Linear
                };
                terms.push(CovariateTerm::new(c.name.clone(), transform));
            }
            for t in &terms {
                if let Transform::Spline { terms: n, .. } = t.transform {
                    if n < 2 {
                        return Err(Error::validation(format!(
                            "spline '{}' in the {} equation has a single term",
                            t.name, eq.cause
                        )));
                    }
                }
            }
            equations.push(EquationSpec {
                cause: eq.cause,
                terms,
            });
        }
        let spec = ModelSpec {
            cause_set,
            period: coef.period,
            equations,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn spline_part(name: &str) -> Option<(&str, usize)> {
    let (base, suffix) = name.rsplit_once("_S")?;
    let idx: usize = suffix.parse().ok()?;
    (idx >= 1 && !base.is_empty()).then_some((base, idx))
}

/// One named coefficient. `value` is `None` when the source listing names
/// the term without giving a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: Option<f64>,
    /// Source text of the value, kept so listings round-trip verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub literal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationCoefficients {
    pub cause: Cause,
    /// Covariate terms in expansion order, then `const`.
    pub terms: Vec<Coefficient>,
}

impl EquationCoefficients {
    pub fn get(&self, name: &str) -> Option<&Coefficient> {
        self.terms.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub family: ModelFamily,
    pub period: Period,
    pub equations: Vec<EquationCoefficients>,
}

impl CoefficientSet {
    pub fn equation(&self, cause: Cause) -> Option<&EquationCoefficients> {
        self.equations.iter().find(|e| e.cause == cause)
    }

    /// Packs values into the parameter layout used by the solver: per
    /// equation, intercept first, then expanded terms in spec order.
    pub fn to_params(&self, spec: &ModelSpec) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(spec.n_params());
        for eq in &spec.equations {
            let coefs = self.equation(eq.cause).ok_or_else(|| {
                Error::validation(format!("no coefficients for the {} equation", eq.cause))
            })?;
            let names = eq.term_names();
            if coefs.terms.len() != names.len() + 1 {
                return Err(Error::validation(format!(
                    "{} equation has {} coefficients but the spec expands to {} terms plus '{INTERCEPT}'",
                    eq.cause,
                    coefs.terms.len(),
                    names.len()
                )));
            }
            for name in std::iter::once(INTERCEPT).chain(names.iter().map(String::as_str)) {
                let c = coefs.get(name).ok_or_else(|| {
                    Error::validation(format!("{} equation lacks term '{name}'", eq.cause))
                })?;
                out.push(c.value.ok_or_else(|| {
                    Error::MissingData(format!(
                        "coefficient '{name}' of the {} equation has no value",
                        eq.cause
                    ))
                })?);
            }
        }
        Ok(out)
    }

    /// Inverse of [`to_params`](Self::to_params).
    pub fn from_params(spec: &ModelSpec, params: &[f64]) -> Result<Self> {
        if params.len() != spec.n_params() {
            return Err(Error::validation(format!(
                "{} parameters for a model with {}",
                params.len(),
                spec.n_params()
            )));
        }
        let mut offset = 0;
        let mut equations = Vec::new();
        for eq in &spec.equations {
            let width = eq.width() + 1;
            let block = &params[offset..offset + width];
            offset += width;
            let mut terms: Vec<Coefficient> = eq
                .term_names()
                .into_iter()
                .zip(&block[1..])
                .map(|(name, &v)| Coefficient {
                    name,
                    value: Some(v),
                    literal: None,
                })
                .collect();
            terms.push(Coefficient {
                name: INTERCEPT.into(),
                value: Some(block[0]),
                literal: None,
            });
            equations.push(EquationCoefficients {
                cause: eq.cause,
                terms,
            });
        }
        Ok(CoefficientSet {
            family: spec.cause_set.family(),
            period: spec.period,
            equations,
        })
    }
}

/// Covariates with the period dummy set for prediction.
fn prediction_covariates(
    covariates: &BTreeMap<String, f64>,
    spec: &ModelSpec,
    period: Period,
) -> Result<BTreeMap<String, f64>> {
    if period == Period::Overall {
        return Err(Error::validation("predictions are made for the early or late period"));
    }
    if period != spec.period {
        return Err(Error::validation(format!(
            "model is for the {} period but prediction asks for {period}",
            spec.period
        )));
    }
    let mut cov = covariates.clone();
    cov.insert(period.as_str().to_string(), 1.0);
    Ok(cov)
}

/// Linear predictors per cause (baseline fixed at 0), in cause-set order.
pub fn linear_predictors(
    coef: &CoefficientSet,
    covariates: &BTreeMap<String, f64>,
    spec: &ModelSpec,
    period: Period,
) -> Result<Vec<(Cause, f64)>> {
    let cov = prediction_covariates(covariates, spec, period)?;
    let params = coef.to_params(spec)?;
    let mut eta: BTreeMap<Cause, f64> = BTreeMap::new();
    let mut offset = 0;
    for eq in &spec.equations {
        let pairs: Vec<(String, Transform)> = eq
            .terms
            .iter()
            .map(|t| (t.name.clone(), t.transform.clone()))
            .collect();
        let row = crate::basis::expand(&cov, &pairs)?;
        let block = &params[offset..offset + row.len() + 1];
        offset += row.len() + 1;
        let v = block[0] + row.iter().zip(&block[1..]).map(|(x, b)| x * b).sum::<f64>();
        eta.insert(eq.cause, v);
    }
    Ok(spec
        .cause_set
        .causes()
        .iter()
        .map(|&c| (c, eta.get(&c).copied().unwrap_or(0.0)))
        .collect())
}

/// Softmax over the baseline (0) and each equation's linear predictor.
pub fn predict_fractions(
    coef: &CoefficientSet,
    covariates: &BTreeMap<String, f64>,
    spec: &ModelSpec,
    period: Period,
) -> Result<CauseDistribution> {
    let eta = linear_predictors(coef, covariates, spec, period)?;
    softmax(&eta)
}

pub(crate) fn softmax(eta: &[(Cause, f64)]) -> Result<CauseDistribution> {
    let max = eta.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numerical("non-finite linear predictor"));
    }
    let exps: Vec<(Cause, f64)> = eta.iter().map(|&(c, v)| (c, (v - max).exp())).collect();
    CauseDistribution::from_weights(exps)
}

/// Weighted log-likelihood of `coef` on `data`.
pub fn weighted_loglik(coef: &CoefficientSet, data: &[ObservationRecord], spec: &ModelSpec) -> Result<f64> {
    let md = ModelData::build(data, spec)?;
    Ok(md.loglik(&coef.to_params(spec)?))
}

/// Gradient of [`weighted_loglik`] in the solver's parameter layout.
pub fn weighted_gradient(
    coef: &CoefficientSet,
    data: &[ObservationRecord],
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    let md = ModelData::build(data, spec)?;
    Ok(md.evaluate(&coef.to_params(spec)?, false).gradient)
}
