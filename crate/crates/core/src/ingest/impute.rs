//! Filling missing years: linear interpolation between observed years and
//! nearest-year carry for years outside the observed span.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::cause::CauseDistribution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImputeSource {
    Observed,
    Interpolated { before: i32, after: i32 },
    Nearest { year: i32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedYear<T> {
    pub value: T,
    pub source: ImputeSource,
}

impl<T> ImputedYear<T> {
    pub fn is_imputed(&self) -> bool {
        self.source != ImputeSource::Observed
    }
}

/// Generic fill over the union of `years` and the observed years.
fn fill<T: Clone>(
    series: &BTreeMap<i32, T>,
    years: RangeInclusive<i32>,
    interpolate: impl Fn(&T, &T, f64) -> Result<T>,
) -> Result<BTreeMap<i32, ImputedYear<T>>> {
    let (&first, _) = series
        .first_key_value()
        .ok_or_else(|| Error::MissingData("cannot impute an empty series".into()))?;
    let (&last, _) = series.last_key_value().expect("nonempty");
    let lo = (*years.start()).min(first);
    let hi = (*years.end()).max(last);
    let mut out = BTreeMap::new();
    for year in lo..=hi {
        let entry = if let Some(v) = series.get(&year) {
            ImputedYear {
                value: v.clone(),
                source: ImputeSource::Observed,
            }
        } else if year < first {
            ImputedYear {
                value: series[&first].clone(),
                source: ImputeSource::Nearest { year: first },
            }
        } else if year > last {
            ImputedYear {
                value: series[&last].clone(),
                source: ImputeSource::Nearest { year: last },
            }
        } else {
            let (&before, a) = series.range(..year).next_back().expect("year > first");
            let (&after, b) = series.range(year..).next().expect("year < last");
            let t = f64::from(year - before) / f64::from(after - before);
            ImputedYear {
                value: interpolate(a, b, t)?,
                source: ImputeSource::Interpolated { before, after },
            }
        };
        if years.contains(&year) || entry.source == ImputeSource::Observed {
            out.insert(year, entry);
        }
    }
    Ok(out)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Completes a series of cause distributions over `years`.
///
/// Interior gaps get per-cause linear interpolation followed by
/// renormalisation; outer years copy the nearest observed distribution.
/// Observed years pass through untouched, and observed years outside
/// `years` are kept.
pub fn impute_series(
    series: &BTreeMap<i32, CauseDistribution>,
    years: RangeInclusive<i32>,
) -> Result<BTreeMap<i32, ImputedYear<CauseDistribution>>> {
    if let Some((_, d)) = series.first_key_value() {
        let causes: Vec<_> = d.causes().collect();
        for (year, other) in series {
            if other.causes().ne(causes.iter().copied()) {
                return Err(Error::validation(format!(
                    "distribution for {year} uses a different cause list"
                )));
            }
        }
    }
    fill(series, years, |a, b, t| {
        CauseDistribution::from_weights(
            a.iter()
                .zip(b.iter())
                .map(|((c, x), (_, y))| (c, lerp(x, y, t).max(0.0)))
                .collect(),
        )
    })
}

/// Completes a series of equal-length vectors (no renormalisation).
pub fn impute_vectors(
    series: &BTreeMap<i32, Vec<f64>>,
    years: RangeInclusive<i32>,
) -> Result<BTreeMap<i32, ImputedYear<Vec<f64>>>> {
    fill(series, years, |a, b, t| {
        if a.len() != b.len() {
            return Err(Error::validation("vectors of different length in series"));
        }
        Ok(a.iter().zip(b).map(|(x, y)| lerp(*x, *y, t)).collect())
    })
}

/// Completes a scalar series such as one covariate for one country.
pub fn impute_scalar(
    series: &BTreeMap<i32, f64>,
    years: RangeInclusive<i32>,
) -> Result<BTreeMap<i32, ImputedYear<f64>>> {
    fill(series, years, |a, b, t| Ok(lerp(*a, *b, t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cause::Cause;

    fn dist(p: f64) -> CauseDistribution {
        CauseDistribution::new(vec![(Cause::Preterm, p), (Cause::Other, 1.0 - p)]).unwrap()
    }

    #[test]
    fn midpoint_and_edges() {
        let s = BTreeMap::from([(2000, dist(0.3)), (2002, dist(0.5))]);
        let out = impute_series(&s, 1998..=2004).unwrap();
        assert_eq!(out.len(), 7);
        assert!((out[&2001].value.get(Cause::Preterm).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(out[&1998].value, dist(0.3));
        assert_eq!(out[&2004].source, ImputeSource::Nearest { year: 2002 });
        assert!(!out[&2000].is_imputed());
    }

    #[test]
    fn empty_series_errors() {
        assert!(impute_scalar(&BTreeMap::new(), 2000..=2001).is_err());
    }

    #[test]
    fn scalar_interpolation() {
        let s = BTreeMap::from([(2000, 10.0), (2004, 20.0)]);
        let out = impute_scalar(&s, 2000..=2004).unwrap();
        assert_eq!(out[&2001].value, 12.5);
    }
}
