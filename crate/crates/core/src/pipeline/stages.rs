//! Stages up to allocation. Every stage reads earlier artifacts from the run
//! directory and writes its own JSON artifact there, so a later stage can be
//! re-run from cached outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{CoefficientSource, RunConfig};
use crate::basis::{cap_to_range, CapMode, CovariateRange};
use crate::cause::{Cause, CauseDistribution, CauseSet, ModelFamily, Period};
use crate::envelope::{combine_periods, split_envelope, AllocationResult, EnvelopeRecord, Membership};
use crate::error::{Error, Result};
use crate::ingest::load::{load_covariates, load_envelopes, load_groups, load_membership, load_observations, load_vr};
use crate::ingest::{
    apply_missing_cause_policy, build_vr_distribution, group_vr_records, impute_scalar, impute_series, Cell,
    ConflictPolicy, CovariatePanel, EstimationMethod, GroupAssignment, ImputeSource, IssueReport, ObservationRecord,
    VrDistribution,
};
use crate::mnlogit::{fit, predict_fractions, published_coefficients, CoefficientSet, FitOptions, FitResult, ModelSpec};
use crate::select::{forward_select, spec_from_traces, write_summary_csv, write_trace_csv, SelectionOptions, SelectionTrace};

pub const INGEST_FILE: &str = "ingest.json";
pub const IMPUTE_FILE: &str = "impute.json";
pub const SELECT_FILE: &str = "selection.json";
pub const FIT_FILE: &str = "fit.json";
pub const PREDICT_FILE: &str = "predictions.json";
pub const ALLOCATE_FILE: &str = "allocation.json";

pub(crate) fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: name.to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingData(format!("{} not found; run the stage that writes it first", path.display()))
        } else {
            Error::io(&path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

pub(crate) fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn family_of(method: EstimationMethod) -> Option<ModelFamily> {
    match method {
        EstimationMethod::Vr => None,
        EstimationMethod::LowMortalityModel => Some(ModelFamily::LowMortality),
        EstimationMethod::HighMortalityModel => Some(ModelFamily::HighMortality),
    }
}

pub(crate) const PERIODS: [Period; 2] = [Period::Early, Period::Late];

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestArtifact {
    pub groups: Vec<GroupAssignment>,
    pub envelopes: Vec<EnvelopeRecord>,
    pub membership: Vec<Membership>,
    pub covariates: CovariatePanel,
    pub vr: Vec<VrDistribution>,
    /// Non-imputed VR country-year-periods, the low-mortality model input.
    pub low_input: Vec<ObservationRecord>,
    /// Study observations after the missing-cause policy.
    pub high_input: Vec<ObservationRecord>,
    pub issues: IssueReport,
}

impl IngestArtifact {
    pub fn method_of(&self, unit: &str) -> Option<EstimationMethod> {
        self.groups.iter().find(|g| g.country == unit).map(|g| g.method)
    }

    pub fn input(&self, family: ModelFamily) -> &[ObservationRecord] {
        match family {
            ModelFamily::HighMortality => &self.high_input,
            _ => &self.low_input,
        }
    }
}

fn vr_observation(d: &VrDistribution) -> ObservationRecord {
    let set = CauseSet::low_mortality();
    let cells: Vec<Cell> = set.causes().iter().map(|&c| Cell::single(c, d.count(c))).collect();
    ObservationRecord {
        unit_id: d.country.clone(),
        year: d.year,
        period: d.period,
        total_deaths: cells.iter().map(|c| c.deaths).sum(),
        cells,
        covariates: BTreeMap::new(),
        source: "vr".into(),
    }
}

pub fn ingest(cfg: &RunConfig) -> Result<IngestArtifact> {
    let inputs = &cfg.inputs;
    let groups = load_groups(&inputs.groups)?;
    let envelopes = load_envelopes(&inputs.envelopes)?;
    let membership = load_membership(&inputs.membership)?;
    let (covariates, mut issues) = load_covariates(&inputs.covariates)?;
    let vr_file = inputs.vr.display().to_string();
    let records = load_vr(&inputs.vr)?;
    let methods: BTreeMap<&str, EstimationMethod> = groups.iter().map(|g| (g.country.as_str(), g.method)).collect();

    let mut vr = Vec::new();
    for ((country, year, period), recs) in group_vr_records(&records) {
        if methods.get(country.as_str()) != Some(&EstimationMethod::Vr) {
            issues.warn(
                &vr_file,
                0,
                "vr_outside_vr_group",
                format!("{country} {year} {period}: VR rows for a country not in the VR group are ignored"),
            );
            continue;
        }
        match build_vr_distribution(&recs, ConflictPolicy::FirstListedRow) {
            Ok(d) => {
                for (code, cat) in &d.resolved_conflicts {
                    issues.warn(
                        &vr_file,
                        0,
                        "icd_overlap",
                        format!("{country} {year} {period}: code {code} is claimed by several categories; used {cat}"),
                    );
                }
                for (code, n) in &d.dropped_unmapped {
                    issues.warn(
                        &vr_file,
                        0,
                        "icd_unmapped",
                        format!("{country} {year} {period}: {n} deaths under unmapped code {code} dropped"),
                    );
                }
                vr.push(d);
            }
            Err(Error::MissingData(msg)) => {
                issues.warn(&vr_file, 0, "no_mapped_deaths", format!("{country} {year} {period}: {msg}"));
            }
            Err(e) => return Err(e),
        }
    }
    let low_input = vr.iter().map(vr_observation).collect();

    let mut high_input = Vec::new();
    if cfg.models.high_mortality {
        let path = inputs.observations.as_ref().expect("validated config");
        let (obs, obs_issues) = load_observations(path)?;
        issues.extend(obs_issues);
        let set = CauseSet::high_mortality();
        for o in &obs {
            high_input.push(apply_missing_cause_policy(o, &set)?);
        }
    }
    info!(
        "ingested {} VR distributions, {} study observations, {} issues",
        vr.len(),
        high_input.len(),
        issues.len()
    );
    Ok(IngestArtifact {
        groups,
        envelopes,
        membership,
        covariates,
        vr,
        low_input,
        high_input,
        issues,
    })
}

pub fn run_ingest(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let art = ingest(cfg)?;
    let path = dir.join("issues.ndjson");
    art.issues.write_ndjson(create_file(&path)?)?;
    write_json(dir, INGEST_FILE, &art)
}

// ---------------------------------------------------------------- impute

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrYear {
    pub country: String,
    pub year: i32,
    pub period: Period,
    pub distribution: CauseDistribution,
    /// Mapped deaths behind the distribution (interpolated for imputed years).
    pub mapped_deaths: f64,
    pub source: ImputeSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateYear {
    pub unit_id: String,
    pub year: i32,
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub imputed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeArtifact {
    pub years: (i32, i32),
    pub vr: Vec<VrYear>,
    pub covariates: Vec<CovariateYear>,
}

impl ImputeArtifact {
    pub fn covariate_lookup(&self) -> BTreeMap<(&str, i32), &CovariateYear> {
        self.covariates.iter().map(|c| ((c.unit_id.as_str(), c.year), c)).collect()
    }

    pub fn vr_lookup(&self) -> BTreeMap<(&str, i32, Period), &VrYear> {
        self.vr.iter().map(|v| ((v.country.as_str(), v.year, v.period), v)).collect()
    }
}

pub(crate) fn estimation_years(cfg: &RunConfig, envelopes: &[EnvelopeRecord]) -> Result<(i32, i32)> {
    if let Some(y) = cfg.years {
        return Ok(y);
    }
    let lo = envelopes.iter().map(|e| e.year).min();
    let hi = envelopes.iter().map(|e| e.year).max();
    lo.zip(hi).ok_or_else(|| Error::MissingData("no envelope rows".into()))
}

pub fn impute(cfg: &RunConfig, ing: &IngestArtifact) -> Result<ImputeArtifact> {
    let (first, last) = estimation_years(cfg, &ing.envelopes)?;

    let mut vr = Vec::new();
    for g in ing.groups.iter().filter(|g| g.method == EstimationMethod::Vr) {
        for period in PERIODS {
            let rows: Vec<&VrDistribution> = ing
                .vr
                .iter()
                .filter(|d| d.country == g.country && d.period == period)
                .collect();
            if rows.is_empty() {
                return Err(Error::MissingData(format!(
                    "VR country {} has no usable {period} VR data",
                    g.country
                )));
            }
            let dists: BTreeMap<i32, CauseDistribution> = rows.iter().map(|d| (d.year, d.distribution.clone())).collect();
            let totals: BTreeMap<i32, f64> = rows.iter().map(|d| (d.year, d.mapped_deaths as f64)).collect();
            let filled = impute_series(&dists, first..=last)?;
            let filled_totals = impute_scalar(&totals, first..=last)?;
            for (year, d) in filled.into_iter().filter(|(y, _)| (first..=last).contains(y)) {
                vr.push(VrYear {
                    country: g.country.clone(),
                    year,
                    period,
                    distribution: d.value,
                    mapped_deaths: filled_totals[&year].value,
                    source: d.source,
                });
            }
        }
    }

    // Covariates must also cover the years of every model input row.
    let input_years = ing.low_input.iter().chain(&ing.high_input).map(|o| o.year);
    let cov_first = input_years.clone().min().map_or(first, |y| y.min(first));
    let cov_last = input_years.max().map_or(last, |y| y.max(last));
    let mut rows: BTreeMap<(String, i32), CovariateYear> = BTreeMap::new();
    for (unit, by_year) in &ing.covariates.values {
        let names: BTreeSet<&String> = by_year.values().flat_map(|m| m.keys()).collect();
        for name in names {
            let series: BTreeMap<i32, f64> = by_year
                .iter()
                .filter_map(|(y, m)| m.get(name).map(|v| (*y, *v)))
                .collect();
            for (year, v) in impute_scalar(&series, cov_first..=cov_last)? {
                let row = rows.entry((unit.clone(), year)).or_insert_with(|| CovariateYear {
                    unit_id: unit.clone(),
                    year,
                    values: BTreeMap::new(),
                    imputed: Vec::new(),
                });
                row.values.insert(name.clone(), v.value);
                if v.is_imputed() {
                    row.imputed.push(name.clone());
                }
            }
        }
    }
    Ok(ImputeArtifact {
        years: (first, last),
        vr,
        covariates: rows.into_values().collect(),
    })
}

pub fn run_impute(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ing: IngestArtifact = read_json(dir, INGEST_FILE)?;
    write_json(dir, IMPUTE_FILE, &impute(cfg, &ing)?)
}

// ---------------------------------------------------------------- select

/// Model input rows for one family and period with covariates attached:
/// rows for the period itself plus overall rows.
pub fn model_input(
    ing: &IngestArtifact,
    imp: &ImputeArtifact,
    family: ModelFamily,
    period: Period,
) -> Result<Vec<ObservationRecord>> {
    let lookup = imp.covariate_lookup();
    ing.input(family)
        .iter()
        .filter(|o| o.period == period || o.period == Period::Overall)
        .map(|o| {
            let cov = lookup.get(&(o.unit_id.as_str(), o.year)).ok_or_else(|| {
                Error::MissingData(format!("no covariates for input row {} {}", o.unit_id, o.year))
            })?;
            let mut o = o.clone();
            o.covariates = cov.values.clone();
            Ok(o)
        })
        .collect()
}

fn candidates(cfg: &RunConfig, family: ModelFamily, period: Period, input: &[ObservationRecord]) -> Result<Vec<String>> {
    let configured = cfg.candidates.for_family(family);
    let mut names: Vec<String> = if configured.is_empty() {
        let mut common: Option<BTreeSet<&String>> = None;
        for o in input {
            let keys: BTreeSet<&String> = o.covariates.keys().collect();
            common = Some(match common {
                None => keys,
                Some(c) => c.intersection(&keys).copied().collect(),
            });
        }
        common.unwrap_or_default().into_iter().cloned().collect()
    } else {
        for name in configured {
            if let Some(o) = input.iter().find(|o| !o.covariates.contains_key(name)) {
                return Err(Error::validation(format!(
                    "candidate covariate '{name}' is missing for {} {} in the {family} input",
                    o.unit_id, o.year
                )));
            }
        }
        configured.to_vec()
    };
    if input.iter().any(|o| o.period == Period::Overall) {
        names.push(period.as_str().to_string());
    }
    Ok(names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedModel {
    pub family: ModelFamily,
    pub period: Period,
    pub spec: ModelSpec,
    #[serde(default)]
    pub traces: Vec<SelectionTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectArtifact {
    pub source: CoefficientSource,
    pub models: Vec<SelectedModel>,
}

pub fn select(cfg: &RunConfig, ing: &IngestArtifact, imp: &ImputeArtifact) -> Result<SelectArtifact> {
    let mut models = Vec::new();
    for family in cfg.models.enabled() {
        for period in PERIODS {
            let cause_set = CauseSet::for_family(family);
            let model = match cfg.coefficients {
                CoefficientSource::Published => {
                    let file = published_coefficients();
                    let coef = file.get(family, period).ok_or_else(|| {
                        Error::MissingData(format!("no published {family} {period} coefficients"))
                    })?;
                    SelectedModel {
                        family,
                        period,
                        spec: ModelSpec::from_coefficients(coef)?,
                        traces: Vec::new(),
                    }
                }
                CoefficientSource::Fit => {
                    let input = model_input(ing, imp, family, period)?;
                    let names = candidates(cfg, family, period, &input)?;
                    let mut options = SelectionOptions::for_family(family);
                    options.spline_knots = cfg.knots.for_family(family);
                    let traces = cause_set
                        .ratios()
                        .map(|ratio| forward_select(&input, &cause_set, period, ratio, &names, &options))
                        .collect::<Result<Vec<_>>>()?;
                    for t in &traces {
                        info!(
                            "{family} {period} {}: {} covariates, {:.0}% reduction",
                            t.ratio,
                            t.accepted.len(),
                            t.percent_reduction
                        );
                    }
                    SelectedModel {
                        family,
                        period,
                        spec: spec_from_traces(&cause_set, period, &traces)?,
                        traces,
                    }
                }
            };
            models.push(model);
        }
    }
    Ok(SelectArtifact {
        source: cfg.coefficients,
        models,
    })
}

pub fn run_select(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ing: IngestArtifact = read_json(dir, INGEST_FILE)?;
    let imp: ImputeArtifact = read_json(dir, IMPUTE_FILE)?;
    let art = select(cfg, &ing, &imp)?;
    let traces: Vec<SelectionTrace> = art.models.iter().flat_map(|m| m.traces.iter().cloned()).collect();
    write_trace_csv(&traces, create_file(&dir.join("selection_trace.csv"))?)?;
    write_summary_csv(&traces, create_file(&dir.join("selection_summary.csv"))?)?;
    write_json(dir, SELECT_FILE, &art)
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub family: ModelFamily,
    pub period: Period,
    pub spec: ModelSpec,
    pub coefficients: CoefficientSet,
    /// Solver report; absent for published coefficients.
    #[serde(default)]
    pub fit: Option<FitResult>,
    /// Input-data range of each covariate, used for capping predictions.
    pub ranges: Vec<CovariateRange>,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub models: Vec<FittedModel>,
}

impl FitArtifact {
    pub fn model(&self, family: ModelFamily, period: Period) -> Option<&FittedModel> {
        self.models.iter().find(|m| m.family == family && m.period == period)
    }
}

pub fn fit_models(ing: &IngestArtifact, imp: &ImputeArtifact, sel: &SelectArtifact) -> Result<FitArtifact> {
    let mut models = Vec::new();
    for m in &sel.models {
        let input = model_input(ing, imp, m.family, m.period)?;
        let mut spec = m.spec.clone();
        if spec.has_unresolved_knots() {
            spec.resolve_knots(&input)?;
        }
        let (coefficients, fit_result) = match sel.source {
            CoefficientSource::Published => {
                let file = published_coefficients();
                let coef = file.get(m.family, m.period).expect("selected from the same file").clone();
                (coef, None)
            }
            CoefficientSource::Fit => {
                let res = fit(&input, &spec, &FitOptions::default())?;
                if !res.converged {
                    return Err(Error::numerical(format!(
                        "{} {} model did not converge: {}",
                        m.family,
                        m.period,
                        res.warnings.join("; ")
                    )));
                }
                for w in &res.warnings {
                    warn!("{} {} fit: {w}", m.family, m.period);
                }
                (res.coefficients.clone(), Some(res))
            }
        };
        let ranges = spec
            .covariate_names()
            .into_iter()
            .map(|name| {
                let values: Vec<f64> = input.iter().filter_map(|o| o.covariates.get(&name).copied()).collect();
                CovariateRange::from_values(name, values)
            })
            .collect::<Result<Vec<_>>>()?;
        models.push(FittedModel {
            family: m.family,
            period: m.period,
            spec,
            coefficients,
            fit: fit_result,
            ranges,
            n_obs: input.len(),
        });
    }
    Ok(FitArtifact { models })
}

pub fn run_fit(_cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ing: IngestArtifact = read_json(dir, INGEST_FILE)?;
    let imp: ImputeArtifact = read_json(dir, IMPUTE_FILE)?;
    let sel: SelectArtifact = read_json(dir, SELECT_FILE)?;
    write_json(dir, FIT_FILE, &fit_models(&ing, &imp, &sel)?)
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub unit_id: String,
    pub year: i32,
    pub period: Period,
    pub family: ModelFamily,
    /// Model covariates after capping.
    pub covariates: BTreeMap<String, f64>,
    /// Covariates whose value lay outside the input-data range.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub out_of_range: Vec<String>,
    pub distribution: CauseDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictArtifact {
    pub cap_mode: CapMode,
    pub predictions: Vec<Prediction>,
}

pub fn predict(cfg: &RunConfig, ing: &IngestArtifact, imp: &ImputeArtifact, fits: &FitArtifact) -> Result<PredictArtifact> {
    let lookup = imp.covariate_lookup();
    let (first, last) = imp.years;
    let mut predictions = Vec::new();
    for g in &ing.groups {
        let Some(family) = family_of(g.method) else { continue };
        if !cfg.models.enabled().contains(&family) {
            warn!("{} uses the disabled {family} model and is left out", g.country);
            continue;
        }
        for year in first..=last {
            let row = lookup
                .get(&(g.country.as_str(), year))
                .ok_or_else(|| Error::MissingData(format!("no covariates for {} {year}", g.country)))?;
            for period in PERIODS {
                let model = fits
                    .model(family, period)
                    .ok_or_else(|| Error::MissingData(format!("no fitted {family} {period} model")))?;
                let mut covariates = BTreeMap::new();
                let mut out_of_range = Vec::new();
                for range in &model.ranges {
                    let v = *row.values.get(&range.name).ok_or_else(|| {
                        Error::validation(format!("{} {year} lacks covariate '{}'", g.country, range.name))
                    })?;
                    if !range.contains(v) {
                        out_of_range.push(range.name.clone());
                    }
                    covariates.insert(range.name.clone(), cap_to_range(v, range, cfg.cap_mode));
                }
                let distribution = predict_fractions(&model.coefficients, &covariates, &model.spec, period)?;
                predictions.push(Prediction {
                    unit_id: g.country.clone(),
                    year,
                    period,
                    family,
                    covariates,
                    out_of_range,
                    distribution,
                });
            }
        }
    }
    Ok(PredictArtifact {
        cap_mode: cfg.cap_mode,
        predictions,
    })
}

pub fn run_predict(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ing: IngestArtifact = read_json(dir, INGEST_FILE)?;
    let imp: ImputeArtifact = read_json(dir, IMPUTE_FILE)?;
    let fits: FitArtifact = read_json(dir, FIT_FILE)?;
    write_json(dir, PREDICT_FILE, &predict(cfg, &ing, &imp, &fits)?)
}

// ---------------------------------------------------------------- allocate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocateArtifact {
    pub early_share: f64,
    /// Early, late and overall results per unit-year, ordered by unit,
    /// year and period.
    pub results: Vec<AllocationResult>,
}

fn with_flags(mut r: AllocationResult, method: EstimationMethod, flags: &[String]) -> AllocationResult {
    r.method = Some(method);
    r.flags.extend(flags.iter().cloned());
    r
}

pub fn allocate(cfg: &RunConfig, ing: &IngestArtifact, imp: &ImputeArtifact, pred: &PredictArtifact) -> Result<AllocateArtifact> {
    let envelopes: BTreeMap<(&str, i32), &EnvelopeRecord> =
        ing.envelopes.iter().map(|e| ((e.unit_id.as_str(), e.year), e)).collect();
    let vr = imp.vr_lookup();
    let predictions: BTreeMap<(&str, i32, Period), &Prediction> = pred
        .predictions
        .iter()
        .map(|p| ((p.unit_id.as_str(), p.year, p.period), p))
        .collect();
    let (first, last) = imp.years;
    let mut units: Vec<&GroupAssignment> = ing.groups.iter().collect();
    units.sort_by(|a, b| a.country.cmp(&b.country));

    let mut missing = Vec::new();
    let mut results = Vec::new();
    for g in units {
        if let Some(f) = family_of(g.method) {
            if !cfg.models.enabled().contains(&f) {
                continue;
            }
        }
        for year in first..=last {
            let Some(env) = envelopes.get(&(g.country.as_str(), year)) else {
                missing.push(format!("{} {year}", g.country));
                continue;
            };
            let mut flags = Vec::new();
            let mut dists = Vec::new();
            for period in PERIODS {
                match g.method {
                    EstimationMethod::Vr => {
                        let v = vr[&(g.country.as_str(), year, period)];
                        match v.source {
                            ImputeSource::Observed => {}
                            ImputeSource::Interpolated { .. } => flags.push(format!("{period}_vr_interpolated")),
                            ImputeSource::Nearest { year: y } => flags.push(format!("{period}_vr_from_{y}")),
                        }
                        dists.push(v.distribution.clone());
                    }
                    _ => {
                        let p = predictions.get(&(g.country.as_str(), year, period)).ok_or_else(|| {
                            Error::MissingData(format!("no {period} prediction for {} {year}", g.country))
                        })?;
                        for name in &p.out_of_range {
                            let tag = match pred.cap_mode {
                                CapMode::Cap => format!("capped:{name}"),
                                CapMode::Passthrough => format!("out_of_range:{name}"),
                            };
                            if !flags.contains(&tag) {
                                flags.push(tag);
                            }
                        }
                        dists.push(p.distribution.clone());
                    }
                }
            }
            let share = match (g.method, env.observed_early_share) {
                (EstimationMethod::Vr, Some(s)) => s,
                (EstimationMethod::Vr, None) => {
                    let e = vr[&(g.country.as_str(), year, Period::Early)].mapped_deaths;
                    let l = vr[&(g.country.as_str(), year, Period::Late)].mapped_deaths;
                    if e + l > 0.0 {
                        flags.push("early_share_from_vr_counts".into());
                        e / (e + l)
                    } else {
                        flags.push("assumed_early_share".into());
                        cfg.early_share
                    }
                }
                _ => cfg.early_share,
            };
            let (early_env, late_env) = split_envelope(env.neonatal_deaths, share)?;
            let early = AllocationResult::allocate(&g.country, year, Period::Early, &dists[0], early_env, env.live_births)?;
            let late = AllocationResult::allocate(&g.country, year, Period::Late, &dists[1], late_env, env.live_births)?;
            let overall = combine_periods(&early, &late)?;
            for r in [early, late, overall] {
                results.push(with_flags(r, g.method, &flags));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingData(format!("no envelope for: {}", missing.join(", "))));
    }
    Ok(AllocateArtifact {
        early_share: cfg.early_share,
        results,
    })
}

pub fn run_allocate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ing: IngestArtifact = read_json(dir, INGEST_FILE)?;
    let imp: ImputeArtifact = read_json(dir, IMPUTE_FILE)?;
    let pred: PredictArtifact = read_json(dir, PREDICT_FILE)?;
    write_json(dir, ALLOCATE_FILE, &allocate(cfg, &ing, &imp, &pred)?)
}

/// Causes reported for a unit's estimation method.
pub(crate) fn causes_for(method: EstimationMethod) -> Vec<Cause> {
    match family_of(method) {
        Some(f) => CauseSet::for_family(f).causes().to_vec(),
        None => CauseSet::vr().causes().to_vec(),
    }
}
