use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::CapMode;
use crate::cause::ModelFamily;
use crate::envelope::DEFAULT_EARLY_SHARE;
use crate::error::{Error, Result};

/// Where model coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSource {
    /// Select covariates and fit on the input data.
    #[default]
    Fit,
    /// Use the bundled published coefficients; selection and fitting are
    /// skipped. Spline knots are placed from the input data.
    Published,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub observations: Option<PathBuf>,
    pub vr: PathBuf,
    pub covariates: PathBuf,
    pub groups: PathBuf,
    pub envelopes: PathBuf,
    pub membership: PathBuf,
    /// Long-format alternative estimates for the comparison report.
    #[serde(default)]
    pub comparison: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelToggles {
    #[serde(default = "yes")]
    pub low_mortality: bool,
    #[serde(default = "yes")]
    pub high_mortality: bool,
}

impl Default for ModelToggles {
    fn default() -> Self {
        ModelToggles {
            low_mortality: true,
            high_mortality: true,
        }
    }
}

impl ModelToggles {
    pub fn enabled(&self) -> Vec<ModelFamily> {
        let mut out = Vec::new();
        if self.low_mortality {
            out.push(ModelFamily::LowMortality);
        }
        if self.high_mortality {
            out.push(ModelFamily::HighMortality);
        }
        out
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: default_replicates(),
            seed: default_seed(),
        }
    }
}

fn default_replicates() -> usize {
    1000
}

fn default_seed() -> u64 {
    20_130_101
}

/// Spline knot counts per model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnotConfig {
    pub low_mortality: usize,
    pub high_mortality: usize,
}

impl Default for KnotConfig {
    fn default() -> Self {
        KnotConfig {
            low_mortality: 4,
            high_mortality: 3,
        }
    }
}

impl KnotConfig {
    pub fn for_family(&self, family: ModelFamily) -> usize {
        match family {
            ModelFamily::HighMortality => self.high_mortality,
            _ => self.low_mortality,
        }
    }
}

/// Candidate covariates per model. Empty means every covariate available
/// for all of the model's input rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateConfig {
    #[serde(default)]
    pub low_mortality: Vec<String>,
    #[serde(default)]
    pub high_mortality: Vec<String>,
}

impl CandidateConfig {
    pub fn for_family(&self, family: ModelFamily) -> &[String] {
        match family {
            ModelFamily::HighMortality => &self.high_mortality,
            _ => &self.low_mortality,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputPaths,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// First and last estimation year; defaults to the envelope years.
    #[serde(default)]
    pub years: Option<(i32, i32)>,
    /// Year shown in the single-year reports; defaults to the last year.
    #[serde(default)]
    pub report_year: Option<i32>,
    #[serde(default = "default_early_share")]
    pub early_share: f64,
    #[serde(default)]
    pub cap_mode: CapMode,
    #[serde(default)]
    pub coefficients: CoefficientSource,
    #[serde(default)]
    pub models: ModelToggles,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub knots: KnotConfig,
    #[serde(default)]
    pub candidates: CandidateConfig,
    #[serde(default)]
    pub jobs: usize,
    /// Unit id given to national results built from state-level results.
    #[serde(default = "default_national")]
    pub india_national: String,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_early_share() -> f64 {
    DEFAULT_EARLY_SHARE
}

fn default_national() -> String {
    "IND".into()
}

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub early_share: Option<f64>,
    pub no_cap: bool,
    pub bootstrap_n: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it, including `out`, are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        if let Some(p) = i.observations.as_mut() {
            join(p);
        }
        join(&mut i.vr);
        join(&mut i.covariates);
        join(&mut i.groups);
        join(&mut i.envelopes);
        join(&mut i.membership);
        if let Some(p) = i.comparison.as_mut() {
            join(p);
        }
        join(&mut self.out);
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.early_share {
            self.early_share = s;
        }
        if o.no_cap {
            self.cap_mode = CapMode::Passthrough;
        }
        if let Some(b) = o.bootstrap_n {
            self.bootstrap.replicates = b;
        }
        if let Some(s) = o.seed {
            self.bootstrap.seed = s;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.early_share) {
            return Err(Error::Config(format!("early_share {} is outside [0, 1]", self.early_share)));
        }
        if self.bootstrap.replicates < 2 {
            return Err(Error::Config("bootstrap replicates must be at least 2".into()));
        }
        for family in [ModelFamily::LowMortality, ModelFamily::HighMortality] {
            crate::basis::default_knot_percentiles(self.knots.for_family(family))
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some((a, b)) = self.years {
            if a > b {
                return Err(Error::Config(format!("years {a}..{b} are reversed")));
            }
        }
        if self.models.high_mortality && self.inputs.observations.is_none() {
            return Err(Error::Config("the high-mortality model needs inputs.observations".into()));
        }
        Ok(())
    }
}
