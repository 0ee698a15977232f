//! Covariate selection by jackknife out-of-sample chi-squared.
//!
//! Each log-cause ratio is treated on its own as a two-cell model (target
//! cause against the baseline). Hold-out units are countries for the
//! low-mortality model and single observations for the high-mortality one.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{knots_from_quantiles, Transform};
use crate::cause::{Cause, CauseSet, ModelFamily, Period};
use crate::error::{Error, Result};
use crate::ingest::{Cell, ObservationRecord};
use crate::mnlogit::{fit_data, CovariateTerm, FitOptions, ModelData, ModelSpec};

/// Fraction of failed folds above which a candidate is rejected.
pub const MAX_SKIPPED_FOLDS: f64 = 0.20;
/// Relative decrease required to count as an improvement.
const STRICT_DECREASE: f64 = 1e-9;

/// Σ (observed − expected)² / expected. Empty cells contribute nothing; a
/// positive observation with zero expectation gives +∞.
pub fn chi_squared(observed: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len(), "observed and expected differ in length");
    let mut total = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        if e > 0.0 {
            total += (o - e) * (o - e) / e;
        } else if o > 0.0 {
            return f64::INFINITY;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutUnit {
    /// All rows of a unit are held out together.
    Unit,
    /// Every row is its own fold.
    Observation,
}

impl HoldoutUnit {
    pub fn for_family(family: ModelFamily) -> Self {
        match family {
            ModelFamily::HighMortality => HoldoutUnit::Observation,
            _ => HoldoutUnit::Unit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub holdout: HoldoutUnit,
    /// Knot count for spline candidates.
    pub spline_knots: usize,
    pub fit: FitOptions,
}

impl SelectionOptions {
    pub fn for_family(family: ModelFamily) -> Self {
        SelectionOptions {
            holdout: HoldoutUnit::for_family(family),
            spline_knots: match family {
                ModelFamily::HighMortality => 3,
                _ => 4,
            },
            fit: FitOptions {
                tolerance: 1e-8,
                max_iter: 100,
                ridge: 1e-8,
            },
        }
    }
}

/// Observations reduced to (target, baseline) counts for one ratio.
#[derive(Debug, Clone)]
pub struct PairData {
    pub target: Cause,
    pub spec_base: ModelSpec,
    pub records: Vec<ObservationRecord>,
    /// Observations dropped because the target or baseline sat in a
    /// composite cell or both counts were zero.
    pub skipped: usize,
}

impl PairData {
    pub fn build(data: &[ObservationRecord], cause_set: &CauseSet, period: Period, target: Cause) -> Result<Self> {
        let pair = cause_set.pair(target)?;
        let baseline = cause_set.baseline();
        let mut records = Vec::new();
        let mut skipped = 0;
        for o in data {
            let single = |c: Cause| {
                o.cells
                    .iter()
                    .find(|cell| cell.causes.contains(c))
                    .filter(|cell| cell.causes.len() == 1)
                    .map(|cell| cell.deaths)
            };
            match (single(target), single(baseline)) {
                (Some(t), Some(b)) if t + b > 0 => records.push(ObservationRecord {
                    cells: vec![Cell::single(baseline, b), Cell::single(target, t)],
                    total_deaths: t + b,
                    ..o.clone()
                }),
                _ => skipped += 1,
            }
        }
        Ok(PairData {
            target,
            spec_base: ModelSpec::intercept_only(pair, period),
            records,
            skipped,
        })
    }

    fn spec(&self, terms: &[CovariateTerm]) -> ModelSpec {
        let mut spec = self.spec_base.clone();
        spec.equations[0].terms = terms.to_vec();
        spec
    }

    /// Fold membership: row indices per hold-out unit, in first-seen order.
    pub fn folds(&self, holdout: HoldoutUnit) -> Vec<Vec<usize>> {
        match holdout {
            HoldoutUnit::Observation => (0..self.records.len()).map(|i| vec![i]).collect(),
            HoldoutUnit::Unit => {
                let ids: Vec<&str> = self.records.iter().map(|r| r.unit_id.as_str()).collect();
                crate::uncertainty::ResampleDesign::grouped(&ids)
            }
        }
    }

    /// Covariate values across the pair records (for the period dummy,
    /// 1 for period-specific rows and 0 for overall rows).
    pub fn values(&self, name: &str) -> Vec<f64> {
        let dummy = self.spec_base.period_dummy_name();
        self.records
            .iter()
            .filter_map(|r| {
                if Some(name) == dummy {
                    Some(if r.period == Period::Overall { 0.0 } else { 1.0 })
                } else {
                    r.covariates.get(name).copied()
                }
            })
            .collect()
    }
}

/// JSON has no infinity; rejected candidates carry `"inf"` instead.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number, got '{other}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosResult {
    #[serde(with = "extended_f64")]
    pub chi2: f64,
    pub folds: usize,
    pub skipped_folds: usize,
    /// True when too many folds failed; `chi2` is then +∞.
    pub rejected: bool,
}

/// Leave-one-unit-out chi-squared of target-cause deaths for a candidate
/// term list. Folds run in parallel; the sum is taken in fold order.
pub fn jackknife_oos_chi2(pairs: &PairData, terms: &[CovariateTerm], options: &SelectionOptions) -> Result<OosResult> {
    let folds = pairs.folds(options.holdout);
    if folds.len() < 3 {
        return Err(Error::validation(format!(
            "{} ratio has {} hold-out units; at least 3 are needed",
            pairs.target,
            folds.len()
        )));
    }
    let spec = pairs.spec(terms);
    let md = ModelData::build(&pairs.records, &spec)?;
    let n = md.len();
    let per_fold: Vec<Option<f64>> = folds
        .par_iter()
        .map(|held| {
            let train: Vec<usize> = (0..n).filter(|i| !held.contains(i)).collect();
            let res = fit_data(&md.subset(&train), &spec, &options.fit).ok()?;
            if !res.converged {
                return None;
            }
            let mut observed = Vec::with_capacity(held.len());
            let mut expected = Vec::with_capacity(held.len());
            for &i in held {
                let p = md.probabilities(i, &res.params);
                let total = pairs.records[i].total_deaths as f64;
                observed.push(pairs.records[i].cells[1].deaths as f64);
                expected.push(total * p[1]);
            }
            Some(chi_squared(&observed, &expected))
        })
        .collect();
    let skipped = per_fold.iter().filter(|v| v.is_none()).count();
    let rejected = skipped as f64 > MAX_SKIPPED_FOLDS * folds.len() as f64;
    if rejected {
        warn!(
            "{} ratio candidate {:?}: {skipped} of {} folds failed",
            pairs.target,
            terms.iter().map(|t| &t.name).collect::<Vec<_>>(),
            folds.len()
        );
    }
    let chi2 = if rejected {
        f64::INFINITY
    } else {
        per_fold.iter().flatten().fold(0.0, |a, b| a + b)
    };
    Ok(OosResult {
        chi2,
        folds: folds.len(),
        skipped_folds: skipped,
        rejected,
    })
}

/// Forms worth trying for a covariate, or an empty list if it is constant.
pub fn candidate_forms(values: &[f64], spline_knots: usize) -> Vec<Transform> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Vec::new();
    }
    if distinct.iter().all(|v| *v == 0.0 || *v == 1.0) {
        return vec![Transform::Binary];
    }
    let mut forms = vec![Transform::Linear, Transform::Quadratic];
    if distinct.len() > spline_knots {
        if let Ok(knots) = knots_from_quantiles(values, spline_knots) {
            forms.push(Transform::spline(knots).expect("validated knots"));
        }
    }
    forms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub phase: String,
    pub candidate: String,
    pub transform: Transform,
    #[serde(with = "extended_f64")]
    pub chi2: f64,
    pub accepted: bool,
}

/// Every evaluation made while selecting covariates for one ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub family: ModelFamily,
    pub period: Period,
    pub ratio: Cause,
    pub baseline: Cause,
    pub evaluations: Vec<TraceRow>,
    pub accepted: Vec<CovariateTerm>,
    #[serde(with = "extended_f64")]
    pub null_chi2: f64,
    #[serde(with = "extended_f64")]
    pub final_chi2: f64,
    pub percent_reduction: f64,
    pub skipped_observations: usize,
}

impl SelectionTrace {
    /// Chi-squared after each accepted step, starting from the null model.
    pub fn accepted_path(&self) -> Vec<f64> {
        std::iter::once(self.null_chi2)
            .chain(self.evaluations.iter().filter(|e| e.accepted).map(|e| e.chi2))
            .collect()
    }
}

fn improves(new: f64, current: f64) -> bool {
    new.is_finite() && new < current * (1.0 - STRICT_DECREASE)
}

/// Picks the form with the smallest out-of-sample chi-squared for one
/// covariate on its own. Ties go to the simpler form. `None` when the
/// covariate is constant or every form fails.
pub fn choose_form(
    pairs: &PairData,
    covariate: &str,
    options: &SelectionOptions,
) -> Result<Option<(Transform, f64, Vec<(Transform, f64)>)>> {
    let forms = candidate_forms(&pairs.values(covariate), options.spline_knots);
    let mut tried = Vec::new();
    let mut best: Option<(Transform, f64)> = None;
    for form in forms {
        let term = CovariateTerm::new(covariate, form.clone());
        let chi2 = jackknife_oos_chi2(pairs, &[term], options)?.chi2;
        tried.push((form.clone(), chi2));
        let better = match &best {
            None => chi2.is_finite(),
            Some((_, b)) => improves(chi2, *b),
        };
        if better {
            best = Some((form, chi2));
        }
    }
    Ok(best.map(|(f, c)| (f, c, tried)))
}

/// Forward selection for one ratio: form choice per covariate, best single
/// covariate first, then repeated passes over the rest adding any covariate
/// that lowers the chi-squared, until a pass adds nothing.
pub fn forward_select(
    data: &[ObservationRecord],
    cause_set: &CauseSet,
    period: Period,
    target: Cause,
    candidates: &[String],
    options: &SelectionOptions,
) -> Result<SelectionTrace> {
    let pairs = PairData::build(data, cause_set, period, target)?;
    let null_chi2 = jackknife_oos_chi2(&pairs, &[], options)?.chi2;
    let mut evaluations = Vec::new();

    let mut pool: Vec<(CovariateTerm, f64)> = Vec::new();
    for name in candidates {
        match choose_form(&pairs, name, options)? {
            Some((form, chi2, tried)) => {
                for (t, c) in tried {
                    evaluations.push(TraceRow {
                        step: 0,
                        phase: "form".into(),
                        candidate: name.clone(),
                        transform: t,
                        chi2: c,
                        accepted: false,
                    });
                }
                pool.push((CovariateTerm::new(name.clone(), form), chi2));
            }
            None => evaluations.push(TraceRow {
                step: 0,
                phase: "excluded".into(),
                candidate: name.clone(),
                transform: Transform::Linear,
                chi2: f64::INFINITY,
                accepted: false,
            }),
        }
    }
    // Stable sort keeps input order among equal marginal values.
    pool.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut accepted: Vec<CovariateTerm> = Vec::new();
    let mut current = null_chi2;
    let mut step = 1;
    if let Some((term, chi2)) = pool.first().cloned() {
        let ok = improves(chi2, current);
        evaluations.push(TraceRow {
            step,
            phase: "forward".into(),
            candidate: term.name.clone(),
            transform: term.transform.clone(),
            chi2,
            accepted: ok,
        });
        if ok {
            accepted.push(term);
            current = chi2;
            pool.remove(0);
            loop {
                let mut added = false;
                let mut i = 0;
                while i < pool.len() {
                    step += 1;
                    let mut trial = accepted.clone();
                    trial.push(pool[i].0.clone());
                    let chi2 = jackknife_oos_chi2(&pairs, &trial, options)?.chi2;
                    let ok = improves(chi2, current);
                    evaluations.push(TraceRow {
                        step,
                        phase: "forward".into(),
                        candidate: pool[i].0.name.clone(),
                        transform: pool[i].0.transform.clone(),
                        chi2,
                        accepted: ok,
                    });
                    if ok {
                        accepted = trial;
                        current = chi2;
                        pool.remove(i);
                        added = true;
                    } else {
                        i += 1;
                    }
                }
                if !added || pool.is_empty() {
                    break;
                }
            }
        }
    }
    let percent_reduction = if null_chi2 > 0.0 && null_chi2.is_finite() {
        (100.0 * (null_chi2 - current) / null_chi2).clamp(0.0, 100.0)
    } else {
        0.0
    };
    Ok(SelectionTrace {
        family: cause_set.family(),
        period,
        ratio: target,
        baseline: cause_set.baseline(),
        evaluations,
        accepted,
        null_chi2,
        final_chi2: current,
        percent_reduction,
        skipped_observations: pairs.skipped,
    })
}

/// Model spec whose equations carry the accepted covariates of each trace.
pub fn spec_from_traces(cause_set: &CauseSet, period: Period, traces: &[SelectionTrace]) -> Result<ModelSpec> {
    let mut spec = ModelSpec::intercept_only(cause_set.clone(), period);
    for t in traces {
        let eq = spec
            .equation_mut(t.ratio)
            .ok_or_else(|| Error::validation(format!("{} is not a ratio of this model", t.ratio)))?;
        eq.terms = t.accepted.clone();
    }
    spec.validate()?;
    Ok(spec)
}

/// One CSV row per evaluation.
pub fn write_trace_csv<W: Write>(traces: &[SelectionTrace], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |source| Error::Csv {
        file: "selection trace".into(),
        source,
    };
    out.write_record([
        "family", "period", "ratio", "step", "phase", "candidate", "transform", "knots", "chi2", "accepted",
    ])
    .map_err(csv_err)?;
    for t in traces {
        for e in &t.evaluations {
            let knots = match &e.transform {
                Transform::Spline { knots, .. } => knots.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" "),
                _ => String::new(),
            };
            out.write_record([
                t.family.as_str(),
                t.period.as_str(),
                t.ratio.as_str(),
                &e.step.to_string(),
                &e.phase,
                &e.candidate,
                e.transform.kind(),
                &knots,
                &e.chi2.to_string(),
                if e.accepted { "1" } else { "0" },
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::io("selection trace", e))
}

fn form_code(t: &Transform) -> &'static str {
    match t {
        Transform::Linear => "L",
        Transform::Quadratic => "Q",
        Transform::Spline { .. } => "S",
        Transform::Binary => "B",
    }
}

/// Accepted covariates grouped by form: `L: a, b Q: c B: period`.
pub fn describe_terms(terms: &[CovariateTerm], period_dummy: Option<&str>) -> String {
    let mut groups: BTreeMap<usize, (&str, Vec<String>)> = BTreeMap::new();
    for t in terms {
        let order = match form_code(&t.transform) {
            "L" => 0,
            "Q" => 1,
            "S" => 2,
            _ => 3,
        };
        let name = if Some(t.name.as_str()) == period_dummy {
            "period".to_string()
        } else {
            t.name.clone()
        };
        groups
            .entry(order)
            .or_insert((form_code(&t.transform), Vec::new()))
            .1
            .push(name);
    }
    if groups.is_empty() {
        return "none".into();
    }
    groups
        .values()
        .map(|(code, names)| format!("{code}: {}", names.join(", ")))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Summary table: one row per ratio with the selected covariates and the
/// percent reduction in residuals, early and late side by side.
pub fn write_summary_csv<W: Write>(traces: &[SelectionTrace], w: W) -> Result<()> {
    let mut rows: BTreeMap<(ModelFamily, Cause, Cause), [Option<&SelectionTrace>; 2]> = BTreeMap::new();
    for t in traces {
        let slot = match t.period {
            Period::Early => 0,
            Period::Late => 1,
            Period::Overall => continue,
        };
        rows.entry((t.family, t.ratio, t.baseline)).or_default()[slot] = Some(t);
    }
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |source| Error::Csv {
        file: "selection summary".into(),
        source,
    };
    out.write_record([
        "model",
        "ratio",
        "early_covariates",
        "early_reduction_pct",
        "late_covariates",
        "late_reduction_pct",
    ])
    .map_err(csv_err)?;
    for ((family, ratio, baseline), slots) in rows {
        let cell = |t: Option<&SelectionTrace>| match t {
            Some(t) => (
                describe_terms(&t.accepted, Some(t.period.as_str())),
                format!("{:.0}%", crate::envelope::round_half_up(t.percent_reduction, 0)),
            ),
            None => (String::new(), String::new()),
        };
        let (ec, er) = cell(slots[0]);
        let (lc, lr) = cell(slots[1]);
        out.write_record([
            family.as_str(),
            &format!("{}: {}", ratio.label(), baseline.label()),
            &ec,
            &er,
            &lc,
            &lr,
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("selection summary", e))
}
