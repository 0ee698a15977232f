//! Neonatal cause-of-death estimation engine.
//!
//! The crate turns vital-registration counts and study observations into
//! proportional cause distributions, fits weighted multinomial logistic
//! models for low- and high-mortality settings, selects covariates by
//! out-of-sample chi-squared, allocates death envelopes into cause-specific
//! deaths and risks, and attaches bootstrap or Poisson uncertainty.
//!
//! Modules follow the pipeline order:
//!
//! * [`ingest`]: ICD mapping, VR distributions, missing-cause policy,
//!   imputation and CSV loading.
//! * [`basis`]: covariate expansions (linear, quadratic, restricted cubic
//!   spline, binary) and range capping.
//! * [`mnlogit`]: weighted grouped-multinomial likelihood, Newton fitting and
//!   prediction.
//! * [`select`]: jackknife chi-squared covariate selection.
//! * [`uncertainty`]: percentile bootstrap and Poisson intervals.
//! * [`envelope`]: envelope splitting, allocation, risks and aggregation.
//! * [`pipeline`]: run configuration, stages and published-table reports.

pub mod basis;
pub mod cause;
pub mod envelope;
pub mod error;
pub mod ingest;
pub mod mnlogit;
pub mod pipeline;
pub mod select;
pub mod uncertainty;

pub use cause::{Cause, CauseDistribution, CauseMask, CauseSet, ModelFamily, Period};
pub use error::{Error, Result};
