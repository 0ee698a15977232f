use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neocod_core::pipeline::demo::generate_demo;
use neocod_core::pipeline::report::{run_report_shapes, ReportShape};
use neocod_core::pipeline::{self, Overrides, RunConfig, Stage};
use neocod_core::Error;

/// Neonatal cause-of-death estimation pipeline.
#[derive(Debug, Parser)]
#[command(name = "neocod", version, about)]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

/// Settings that override the config file.
#[derive(Debug, Args)]
struct Flags {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "neocod.toml")]
    config: PathBuf,
    /// Share of neonatal deaths in the early period for modelled countries.
    #[arg(long, global = true)]
    early_share: Option<f64>,
    /// Predict with covariates outside the training range as given.
    #[arg(long, global = true)]
    no_cap: bool,
    /// Bootstrap replicates.
    #[arg(long, global = true)]
    bootstrap_n: Option<usize>,
    /// Bootstrap seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core. Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate inputs, map ICD codes.
    Ingest,
    /// Fill VR and covariate gaps over the estimation years.
    Impute,
    /// Select covariates for each model.
    Select,
    /// Fit the selected models.
    Fit,
    /// Predict cause distributions for modelled countries.
    Predict,
    /// Split envelopes and allocate deaths to causes.
    Allocate,
    /// Bootstrap uncertainty intervals.
    Bootstrap,
    /// Pool results over regions, NMR bands and other groupings.
    Aggregate,
    /// Write result tables.
    Report {
        /// Table shapes to write; all of them when omitted.
        #[arg(long, value_parser = parse_shape)]
        shape: Vec<ReportShape>,
    },
    /// Run every stage into a fresh output directory.
    Run,
    /// Write a synthetic input set and config to DIR.
    GenerateDemo {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        demo_seed: u64,
    },
}

fn parse_shape(s: &str) -> Result<ReportShape, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(flags: &Flags) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&flags.config)?;
    cfg.apply(&Overrides {
        early_share: flags.early_share,
        no_cap: flags.no_cap,
        bootstrap_n: flags.bootstrap_n,
        seed: flags.seed,
        jobs: flags.jobs,
        out: flags.out.clone(),
    })?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), Error> {
    let stage = match cli.command {
        Command::GenerateDemo { dir, demo_seed } => {
            generate_demo(&dir, demo_seed)?;
            println!("wrote demo inputs and config.toml to {}", dir.display());
            return Ok(());
        }
        Command::Run => {
            let cfg = load_config(&cli.flags)?;
            let manifest = pipeline::run(&cfg)?;
            let total: f64 = manifest.stages.iter().map(|s| s.seconds).sum();
            println!("wrote {} files to {} in {total:.1}s", manifest.outputs.len() + 1, cfg.out.display());
            return Ok(());
        }
        Command::Report { shape } if !shape.is_empty() => {
            let cfg = load_config(&cli.flags)?;
            return pipeline::with_workers(&cfg, || run_report_shapes(&cfg, &cfg.out, &shape))
                .map_err(|e| e.in_stage("report"));
        }
        Command::Ingest => Stage::Ingest,
        Command::Impute => Stage::Impute,
        Command::Select => Stage::Select,
        Command::Fit => Stage::Fit,
        Command::Predict => Stage::Predict,
        Command::Allocate => Stage::Allocate,
        Command::Bootstrap => Stage::Bootstrap,
        Command::Aggregate => Stage::Aggregate,
        Command::Report { .. } => Stage::Report,
    };
    let cfg = load_config(&cli.flags)?;
    pipeline::run_stage(stage, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
