//! Merging of unreported causes into the category that absorbed them.

use crate::cause::{Cause, CauseMask, CauseSet};
use crate::error::{Error, Result};

use super::ObservationRecord;

/// Where deaths from an unreported cause were recorded instead.
pub fn receiving_cause(missing: Cause) -> Option<Cause> {
    match missing {
        Cause::Preterm | Cause::Congenital | Cause::Sepsis => Some(Cause::Other),
        Cause::Pneumonia | Cause::Diarrhoea | Cause::Tetanus => Some(Cause::Sepsis),
        Cause::Intrapartum | Cause::Other | Cause::Injuries => None,
    }
}

/// Folds each cause absent from `obs` into the cell of its receiving cause.
///
/// Receivers that are themselves unreported are followed (tetanus to sepsis
/// to other), so the result always partitions the cause set. Counts and
/// total deaths are unchanged.
pub fn apply_missing_cause_policy(
    obs: &ObservationRecord,
    cause_set: &CauseSet,
) -> Result<ObservationRecord> {
    let reported = obs.reported();
    if let Some(c) = reported.iter().find(|c| !cause_set.contains(*c)) {
        return Err(Error::validation(format!(
            "observation {} {} reports {c}, which is not in the {} cause set",
            obs.unit_id,
            obs.year,
            cause_set.family()
        )));
    }
    let mut out = obs.clone();
    for &cause in cause_set.causes() {
        if reported.contains(cause) {
            continue;
        }
        let mut receiver = cause;
        while !reported.contains(receiver) {
            receiver = receiving_cause(receiver).ok_or_else(|| {
                Error::validation(format!(
                    "observation {} {} does not report {receiver}, which has no receiving category",
                    obs.unit_id, obs.year
                ))
            })?;
        }
        let cell = out
            .cells
            .iter_mut()
            .find(|c| c.causes.contains(receiver))
            .expect("receiver is reported, so some cell holds it");
        cell.causes = cell.causes.union(CauseMask::single(cause));
    }
    out.validate(cause_set)?;
    Ok(out)
}
