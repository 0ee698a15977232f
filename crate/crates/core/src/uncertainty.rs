//! Percentile bootstrap over resampled units and Poisson intervals for VR
//! proportions.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::quantile_sorted;
use crate::error::{Error, Result};

/// Share of failed replicates above which a bootstrap result is flagged.
pub const MAX_FAILED_SHARE: f64 = 0.10;
/// Replicate count below which percentile resolution is coarse.
pub const MIN_RESOLVED_REPLICATES: usize = 40;
const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalMethod {
    Bootstrap,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub method: IntervalMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates_used: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl IntervalEstimate {
    /// Same interval multiplied by `factor` (for example fractions to deaths).
    pub fn scaled(&self, factor: f64) -> Self {
        let (a, b) = (self.lo * factor, self.hi * factor);
        IntervalEstimate {
            point: self.point * factor,
            lo: a.min(b),
            hi: a.max(b),
            ..self.clone()
        }
    }
}

/// Range a bootstrap target is clamped to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clamp {
    None,
    NonNegative,
    UnitInterval,
}

impl Clamp {
    fn apply(self, v: f64) -> f64 {
        match self {
            Clamp::None => v,
            Clamp::NonNegative => v.max(0.0),
            Clamp::UnitInterval => v.clamp(0.0, 1.0),
        }
    }
}

/// Linear-interpolation percentile (`p` in [0, 1]) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::MissingData("percentile of no values".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::numerical("percentile of NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

/// Interval for the proportion `cause_deaths / total_deaths` from a Poisson
/// standard error on the count.
///
/// A zero count would give a zero-width interval; its upper bound is
/// instead the exact one-sided 97.5% Poisson bound for zero events,
/// `-ln(0.025) ≈ 3.689` deaths, and the estimate is flagged.
pub fn poisson_vr_interval(cause_deaths: f64, total_deaths: f64) -> Result<IntervalEstimate> {
    if !(total_deaths > 0.0) {
        return Err(Error::validation("Poisson interval needs a positive total"));
    }
    if !(0.0..=total_deaths).contains(&cause_deaths) {
        return Err(Error::validation(format!(
            "cause deaths {cause_deaths} outside [0, {total_deaths}]"
        )));
    }
    let point = cause_deaths / total_deaths;
    let mut flags = Vec::new();
    let (lo, hi) = if cause_deaths == 0.0 {
        flags.push("zero_count_exact_upper_bound".to_string());
        (0.0, (-(0.025f64).ln() / total_deaths).min(1.0))
    } else {
        let se = cause_deaths.sqrt();
        (
            ((cause_deaths - Z95 * se) / total_deaths).clamp(0.0, 1.0),
            ((cause_deaths + Z95 * se) / total_deaths).clamp(0.0, 1.0),
        )
    };
    Ok(IntervalEstimate {
        point,
        lo,
        hi,
        method: IntervalMethod::Poisson,
        replicates_used: None,
        flags,
    })
}

/// Resampling structure: strata of units, each unit a list of row indices.
/// Units are drawn with replacement within each stratum.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResampleDesign {
    pub strata: Vec<Vec<Vec<usize>>>,
}

impl ResampleDesign {
    /// Groups rows by a unit key within one stratum, units in first-seen order.
    pub fn grouped<K: PartialEq>(keys: &[K]) -> Vec<Vec<usize>> {
        let mut units: Vec<(&K, Vec<usize>)> = Vec::new();
        for (i, k) in keys.iter().enumerate() {
            match units.iter_mut().find(|(u, _)| *u == k) {
                Some((_, rows)) => rows.push(i),
                None => units.push((k, vec![i])),
            }
        }
        units.into_iter().map(|(_, rows)| rows).collect()
    }

    /// Row indices of replicate `r` for each stratum.
    pub fn draw(&self, seed: u64, replicate: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate);
        self.strata
            .iter()
            .map(|units| {
                let mut rows = Vec::new();
                for _ in 0..units.len() {
                    rows.extend_from_slice(&units[rng.random_range(0..units.len())]);
                }
                rows
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool. Results do not depend on it.
    pub jobs: usize,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 1000,
            seed: 20_130_101,
            jobs: 0,
        }
    }
}

/// Target vectors of the successful replicates, in replicate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub requested: usize,
    pub failed: usize,
    pub replicates: Vec<Vec<f64>>,
    pub flags: Vec<String>,
}

impl BootstrapRun {
    pub fn n_targets(&self) -> usize {
        self.replicates.first().map_or(0, Vec::len)
    }

    /// Values of target `j` across successful replicates.
    pub fn target(&self, j: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r[j]).collect()
    }

    /// 2.5/97.5 percentile interval for target `j` around `point`.
    pub fn interval(&self, j: usize, point: f64, clamp: Clamp) -> Result<IntervalEstimate> {
        let values = self.target(j);
        let lo = clamp.apply(percentile(&values, 0.025)?);
        let hi = clamp.apply(percentile(&values, 0.975)?);
        Ok(IntervalEstimate {
            point: clamp.apply(point),
            lo: lo.min(hi),
            hi: hi.max(lo),
            method: IntervalMethod::Bootstrap,
            replicates_used: Some(values.len()),
            flags: self.flags.clone(),
        })
    }
}

/// Runs `replicate_fn` on `options.replicates` resamples of `design`.
///
/// Replicate `r` draws from the ChaCha stream `r` of `options.seed`, so the
/// output is identical for any worker count. Failed replicates are dropped
/// and counted.
pub fn bootstrap<F>(design: &ResampleDesign, options: &BootstrapOptions, replicate_fn: F) -> Result<BootstrapRun>
where
    F: Fn(&[Vec<usize>]) -> Result<Vec<f64>> + Sync,
{
    if options.replicates < 2 {
        return Err(Error::validation("bootstrap needs at least 2 replicates"));
    }
    if design.strata.iter().any(Vec::is_empty) {
        return Err(Error::validation("bootstrap stratum has no units"));
    }
    let run_one = |r: usize| -> Option<Vec<f64>> {
        let rows = design.draw(options.seed, r as u64);
        match replicate_fn(&rows) {
            Ok(v) if v.iter().all(|x| x.is_finite()) => Some(v),
            Ok(_) => None,
            Err(e) => {
                log::debug!("bootstrap replicate {r} failed: {e}");
                None
            }
        }
    };
    let outcomes: Vec<Option<Vec<f64>>> = if options.jobs == 0 {
        (0..options.replicates).into_par_iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", options.jobs)))?;
        pool.install(|| (0..options.replicates).into_par_iter().map(run_one).collect())
    };
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    let replicates: Vec<Vec<f64>> = outcomes.into_iter().flatten().collect();
    if replicates.is_empty() {
        return Err(Error::numerical("every bootstrap replicate failed"));
    }
    if replicates.iter().any(|r| r.len() != replicates[0].len()) {
        return Err(Error::validation("bootstrap replicates returned different target counts"));
    }
    let mut flags = Vec::new();
    if failed as f64 > MAX_FAILED_SHARE * options.replicates as f64 {
        warn!("{failed} of {} bootstrap replicates failed", options.replicates);
        flags.push(format!("failed_replicates:{failed}/{}", options.replicates));
    }
    if options.replicates < MIN_RESOLVED_REPLICATES {
        warn!(
            "{} bootstrap replicates give coarse 2.5/97.5 percentiles",
            options.replicates
        );
        flags.push("coarse_percentiles".to_string());
    }
    Ok(BootstrapRun {
        requested: options.replicates,
        failed,
        replicates,
        flags,
    })
}
