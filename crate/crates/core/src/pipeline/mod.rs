//! Run configuration, the staged pipeline and report writers.
//!
//! Each stage reads the JSON artifacts of earlier stages from the run
//! directory and writes its own, so stages can be rerun one at a time.
//! [`run`] executes every stage in a staging directory next to the output
//! and moves it into place only when all stages succeed.

pub mod config;
pub mod demo;
pub mod manifest;
pub mod report;
pub mod resample;
pub mod stages;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;

pub use config::{Overrides, RunConfig};
use manifest::{hash_inputs, FileHash, Manifest, StageTiming};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Impute,
    Select,
    Fit,
    Predict,
    Allocate,
    Bootstrap,
    Aggregate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Impute,
        Stage::Select,
        Stage::Fit,
        Stage::Predict,
        Stage::Allocate,
        Stage::Bootstrap,
        Stage::Aggregate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Impute => "impute",
            Stage::Select => "select",
            Stage::Fit => "fit",
            Stage::Predict => "predict",
            Stage::Allocate => "allocate",
            Stage::Bootstrap => "bootstrap",
            Stage::Aggregate => "aggregate",
            Stage::Report => "report",
        }
    }

    /// Runs this stage against the artifacts in `dir`.
    pub fn run(self, cfg: &RunConfig, dir: &Path) -> Result<()> {
        let res = match self {
            Stage::Ingest => stages::run_ingest(cfg, dir),
            Stage::Impute => stages::run_impute(cfg, dir),
            Stage::Select => stages::run_select(cfg, dir),
            Stage::Fit => stages::run_fit(cfg, dir),
            Stage::Predict => stages::run_predict(cfg, dir),
            Stage::Allocate => stages::run_allocate(cfg, dir),
            Stage::Bootstrap => resample::run_bootstrap(cfg, dir),
            Stage::Aggregate => report::run_aggregate(cfg, dir),
            Stage::Report => report::run_report(cfg, dir),
        };
        res.map_err(|e| e.in_stage(self.name()))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

/// Runs `f` on a pool of `cfg.jobs` workers (0 means one per core).
pub fn with_workers<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    pool.install(f)
}

/// Runs one stage in place in the configured output directory.
pub fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let t = Instant::now();
    with_workers(cfg, || stage.run(cfg, &cfg.out))?;
    info!("{stage} finished in {:.2}s", t.elapsed().as_secs_f64());
    Ok(())
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map_or("out".into(), |n| n.to_string_lossy().into_owned());
    out.with_file_name(format!(".{name}.partial-{}", std::process::id()))
}

/// Hashes of every regular file written into `dir`, sorted by name.
fn hash_outputs(dir: &Path) -> Result<Vec<FileHash>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().expect("file").to_string_lossy().into_owned();
            let mut h = FileHash::of("output", p)?;
            h.path = name;
            Ok(h)
        })
        .collect()
}

fn run_all(cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    let inputs = hash_inputs(cfg)?;
    let mut timings = Vec::new();
    for stage in Stage::ALL {
        let t = Instant::now();
        stage.run(cfg, dir)?;
        let seconds = t.elapsed().as_secs_f64();
        info!("{stage} finished in {seconds:.2}s");
        timings.push(StageTiming {
            stage: stage.name().to_string(),
            seconds,
        });
    }
    Ok(Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seed: cfg.bootstrap.seed,
        inputs,
        stages: timings,
        outputs: hash_outputs(dir)?,
    })
}

/// Runs every stage. Output appears at `cfg.out` only if all stages succeed;
/// an existing directory there is replaced.
pub fn run(cfg: &RunConfig) -> Result<Manifest> {
    let staging = staging_dir(&cfg.out);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let manifest = match with_workers(cfg, || run_all(cfg, &staging)) {
        Ok(m) => m,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    stages::write_json(&staging, MANIFEST_FILE, &manifest)?;
    if cfg.out.exists() {
        fs::remove_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    }
    fs::rename(&staging, &cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    Ok(manifest)
}
