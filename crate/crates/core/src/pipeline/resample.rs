//! Uncertainty stage: Poisson intervals for VR units and a percentile
//! bootstrap over model input units for modelled units and every group.

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{CoefficientSource, RunConfig};
use super::stages::{
    model_input, read_json, write_json, AllocateArtifact, FitArtifact, ImputeArtifact, IngestArtifact,
    PredictArtifact, ALLOCATE_FILE, FIT_FILE, IMPUTE_FILE, INGEST_FILE, PREDICT_FILE,
};
use crate::cause::{Cause, ModelFamily, Period};
use crate::envelope::{
    aggregate, combine_periods, compute_risk, membership_table, AllocationResult, Bounds, Grouping, MembershipTable,
};
use crate::error::{Error, Result};
use crate::ingest::{EstimationMethod, ObservationRecord};
use crate::mnlogit::{fit_data, predict_fractions, FitOptions, ModelData};
use crate::uncertainty::{bootstrap, poisson_vr_interval, BootstrapOptions, Clamp, ResampleDesign};

pub const BOOTSTRAP_FILE: &str = "bootstrap.json";

/// Groupings whose labels are fully available. Region and income groupings
/// are skipped when no unit has the label at all.
pub fn available_groupings(membership: &MembershipTable) -> Vec<Grouping> {
    let mut out = vec![Grouping::Global];
    if membership.values().any(|m| m.mdg_region.is_some()) {
        out.push(Grouping::MdgRegion);
    }
    out.push(Grouping::NmrBand);
    if membership.values().any(|m| m.income_group.is_some()) {
        out.push(Grouping::IncomeGroup);
    }
    out.push(Grouping::EstimationMethod);
    if membership.values().any(|m| m.india_state_of.is_some()) {
        out.push(Grouping::IndiaNational);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInterval {
    pub grouping: Grouping,
    pub label: String,
    pub year: i32,
    pub period: Period,
    pub cause: Cause,
    pub deaths: Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapArtifact {
    pub replicates_requested: usize,
    pub replicates_failed: usize,
    #[serde(default)]
    pub flags: Vec<String>,
    /// Unit results with intervals attached.
    pub results: Vec<AllocationResult>,
    /// Death intervals for every group produced by the aggregate stage.
    pub groups: Vec<GroupInterval>,
}

fn set_intervals(c: &mut crate::envelope::CauseEstimate, fraction: Bounds, envelope: f64, births: f64) -> Result<()> {
    let deaths = Bounds {
        lo: fraction.lo * envelope,
        hi: fraction.hi * envelope,
    };
    c.risk_ci = Some(Bounds {
        lo: compute_risk(deaths.lo, births)?,
        hi: compute_risk(deaths.hi, births)?,
    });
    c.fraction_ci = Some(fraction);
    c.deaths_ci = Some(deaths);
    Ok(())
}

/// Poisson intervals on VR results. Early and late intervals come from the
/// cause counts behind the distribution; overall death bounds are the sums
/// of the period bounds.
fn vr_intervals(results: &mut [AllocationResult], imp: &ImputeArtifact) -> Result<()> {
    let vr = imp.vr_lookup();
    let mut period_bounds: BTreeMap<(String, i32, Cause), (f64, f64)> = BTreeMap::new();
    for r in results.iter_mut().filter(|r| r.method == Some(EstimationMethod::Vr)) {
        if r.period == Period::Overall {
            continue;
        }
        let v = vr[&(r.unit_id.as_str(), r.year, r.period)];
        let (envelope, births) = (r.envelope, r.live_births);
        let mut new_flags = Vec::new();
        for c in &mut r.causes {
            let count = (c.fraction * v.mapped_deaths).min(v.mapped_deaths);
            let iv = poisson_vr_interval(count, v.mapped_deaths)?;
            if !iv.flags.is_empty() {
                new_flags.push(format!("{}:{}", iv.flags.join(","), c.cause));
            }
            set_intervals(c, Bounds { lo: iv.lo, hi: iv.hi }, envelope, births)?;
            let d = c.deaths_ci.expect("just set");
            let e = period_bounds.entry((r.unit_id.clone(), r.year, c.cause)).or_insert((0.0, 0.0));
            e.0 += d.lo;
            e.1 += d.hi;
        }
        r.flags.extend(new_flags.into_iter().map(|f| format!("{}_{f}", r.period)));
    }
    for r in results
        .iter_mut()
        .filter(|r| r.method == Some(EstimationMethod::Vr) && r.period == Period::Overall)
    {
        for c in &mut r.causes {
            let (lo, hi) = period_bounds[&(r.unit_id.clone(), r.year, c.cause)];
            let deaths = Bounds { lo, hi };
            c.deaths_ci = Some(deaths);
            c.fraction_ci = (r.envelope > 0.0).then(|| Bounds {
                lo: (lo / r.envelope).clamp(0.0, 1.0),
                hi: (hi / r.envelope).clamp(0.0, 1.0),
            });
            c.risk_ci = Some(Bounds {
                lo: compute_risk(lo, r.live_births)?,
                hi: compute_risk(hi, r.live_births)?,
            });
        }
    }
    Ok(())
}

/// Resampling unit of an input row: the country for the low-mortality
/// model, the study (unit, year, source) for the high-mortality model.
fn resample_key(family: ModelFamily, o: &ObservationRecord) -> String {
    match family {
        ModelFamily::HighMortality => format!("{}|{}|{}", o.unit_id, o.year, o.source),
        _ => o.unit_id.clone(),
    }
}

struct FamilyModels {
    family: ModelFamily,
    /// Per resampling unit, row indices into the early and late data.
    units: Vec<[Vec<usize>; 2]>,
    data: [ModelData; 2],
    specs: [crate::mnlogit::ModelSpec; 2],
}

fn family_models(
    family: ModelFamily,
    ing: &IngestArtifact,
    imp: &ImputeArtifact,
    fits: &FitArtifact,
) -> Result<FamilyModels> {
    let mut keys: Vec<String> = Vec::new();
    let mut units: Vec<[Vec<usize>; 2]> = Vec::new();
    let mut data = Vec::new();
    let mut specs = Vec::new();
    for (slot, period) in [Period::Early, Period::Late].into_iter().enumerate() {
        let input = model_input(ing, imp, family, period)?;
        for (i, o) in input.iter().enumerate() {
            let key = resample_key(family, o);
            let idx = match keys.iter().position(|k| *k == key) {
                Some(idx) => idx,
                None => {
                    keys.push(key);
                    units.push([Vec::new(), Vec::new()]);
                    keys.len() - 1
                }
            };
            units[idx][slot].push(i);
        }
        let model = fits
            .model(family, period)
            .ok_or_else(|| Error::MissingData(format!("no fitted {family} {period} model")))?;
        data.push(ModelData::build(&input, &model.spec)?);
        specs.push(model.spec.clone());
    }
    let [d0, d1]: [ModelData; 2] = data.try_into().map_err(|_| Error::validation("two periods"))?;
    let [s0, s1]: [crate::mnlogit::ModelSpec; 2] = specs.try_into().map_err(|_| Error::validation("two periods"))?;
    Ok(FamilyModels {
        family,
        units,
        data: [d0, d1],
        specs: [s0, s1],
    })
}

/// Group results of every available grouping, in a fixed order.
fn all_groups(results: &[AllocationResult], membership: &MembershipTable) -> Result<Vec<(Grouping, AllocationResult)>> {
    let mut out = Vec::new();
    for g in available_groupings(membership) {
        for r in aggregate(results, g, membership)? {
            out.push((g, r));
        }
    }
    Ok(out)
}

pub fn run_bootstrap_stage(
    cfg: &RunConfig,
    ing: &IngestArtifact,
    imp: &ImputeArtifact,
    fits: &FitArtifact,
    pred: &PredictArtifact,
    alloc: &AllocateArtifact,
) -> Result<BootstrapArtifact> {
    let membership = membership_table(ing.membership.clone());
    let mut results = alloc.results.clone();
    vr_intervals(&mut results, imp)?;

    let point_groups = all_groups(&results, &membership)?;
    let modelled: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.method.is_some_and(|m| m != EstimationMethod::Vr))
        .map(|(i, _)| i)
        .collect();
    if modelled.is_empty() {
        return Ok(BootstrapArtifact {
            replicates_requested: 0,
            replicates_failed: 0,
            flags: Vec::new(),
            results,
            groups: Vec::new(),
        });
    }
    if cfg.coefficients == CoefficientSource::Published {
        return Err(Error::Config(
            "bootstrap refits the models and needs coefficients = \"fit\"".into(),
        ));
    }

    let families: Vec<FamilyModels> = cfg
        .models
        .enabled()
        .into_iter()
        .map(|f| family_models(f, ing, imp, fits))
        .collect::<Result<_>>()?;
    let design = ResampleDesign {
        strata: families
            .iter()
            .map(|f| (0..f.units.len()).map(|u| vec![u]).collect())
            .collect(),
    };
    let predictions: BTreeMap<(&str, i32, Period), &super::stages::Prediction> = pred
        .predictions
        .iter()
        .map(|p| ((p.unit_id.as_str(), p.year, p.period), p))
        .collect();
    let options = FitOptions::default();

    let replicate = |draw: &[Vec<usize>]| -> Result<Vec<f64>> {
        let mut coefs = BTreeMap::new();
        for (fm, chosen) in families.iter().zip(draw) {
            for slot in 0..2 {
                let rows: Vec<usize> = chosen.iter().flat_map(|&u| fm.units[u][slot].iter().copied()).collect();
                if rows.is_empty() {
                    return Err(Error::numerical("replicate drew no rows for a period"));
                }
                let res = fit_data(&fm.data[slot].subset(&rows), &fm.specs[slot], &options)?;
                if !res.converged {
                    return Err(Error::numerical("replicate fit did not converge"));
                }
                coefs.insert((fm.family, slot), (res.coefficients, &fm.specs[slot]));
            }
        }
        let mut rep = results.clone();
        let mut i = 0;
        while i < modelled.len() {
            let early_idx = modelled[i];
            let r = &results[early_idx];
            debug_assert_eq!(r.period, Period::Early);
            let mut pair = Vec::with_capacity(2);
            for (slot, period) in [Period::Early, Period::Late].into_iter().enumerate() {
                let point = &results[early_idx + slot];
                let p = predictions[&(r.unit_id.as_str(), r.year, period)];
                let (coef, spec) = &coefs[&(p.family, slot)];
                let dist = predict_fractions(coef, &p.covariates, spec, period)?;
                let mut a = AllocationResult::allocate(&r.unit_id, r.year, period, &dist, point.envelope, point.live_births)?;
                a.method = point.method;
                pair.push(a);
            }
            let mut overall = combine_periods(&pair[0], &pair[1])?;
            overall.method = r.method;
            rep[early_idx] = pair.remove(0);
            rep[early_idx + 1] = pair.remove(0);
            rep[early_idx + 2] = overall;
            i += 3;
        }
        let mut targets = Vec::new();
        for &i in &modelled {
            targets.extend(rep[i].causes.iter().map(|c| c.fraction));
        }
        for (_, g) in all_groups(&rep, &membership)? {
            targets.extend(g.causes.iter().map(|c| c.deaths));
        }
        Ok(targets)
    };

    let run = bootstrap(
        &design,
        &BootstrapOptions {
            replicates: cfg.bootstrap.replicates,
            seed: cfg.bootstrap.seed,
            jobs: cfg.jobs,
        },
        replicate,
    )?;
    info!(
        "bootstrap: {} of {} replicates succeeded",
        run.replicates.len(),
        run.requested
    );

    let mut j = 0;
    for &i in &modelled {
        let r = &mut results[i];
        let (envelope, births) = (r.envelope, r.live_births);
        for c in &mut r.causes {
            let iv = run.interval(j, c.fraction, Clamp::UnitInterval)?;
            set_intervals(c, Bounds { lo: iv.lo, hi: iv.hi }, envelope, births)?;
            j += 1;
        }
        r.flags.extend(run.flags.iter().cloned());
    }
    let mut groups = Vec::new();
    for (grouping, g) in &point_groups {
        for c in &g.causes {
            let iv = run.interval(j, c.deaths, Clamp::NonNegative)?;
            groups.push(GroupInterval {
                grouping: *grouping,
                label: g.unit_id.clone(),
                year: g.year,
                period: g.period,
                cause: c.cause,
                deaths: Bounds { lo: iv.lo, hi: iv.hi },
            });
            j += 1;
        }
    }
    if j != run.n_targets() {
        return Err(Error::validation(format!(
            "bootstrap produced {} targets, expected {j}",
            run.n_targets()
        )));
    }
    Ok(BootstrapArtifact {
        replicates_requested: run.requested,
        replicates_failed: run.failed,
        flags: run.flags,
        results,
        groups,
    })
}

pub fn run_bootstrap(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ing: IngestArtifact = read_json(dir, INGEST_FILE)?;
    let imp: ImputeArtifact = read_json(dir, IMPUTE_FILE)?;
    let fits: FitArtifact = read_json(dir, FIT_FILE)?;
    let pred: PredictArtifact = read_json(dir, PREDICT_FILE)?;
    let alloc: AllocateArtifact = read_json(dir, ALLOCATE_FILE)?;
    write_json(
        dir,
        BOOTSTRAP_FILE,
        &run_bootstrap_stage(cfg, &ing, &imp, &fits, &pred, &alloc)?,
    )
}
