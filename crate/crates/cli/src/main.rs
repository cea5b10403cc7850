//! `u5mr`: direct estimates, model fitting, comparison, validation,
//! projection and simulation from one configuration file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use u5mr_core::ModelSpec;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "u5mr", version, about = "Direct estimation and space-time smoothing of under-five mortality")]
struct Cli {
    /// TOML run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn parse_spec(s: &str) -> Result<ModelSpec, String> {
    ModelSpec::parse_label(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Design-based direct estimates per region, period and survey.
    Direct,
    /// Fit one model and write U5MR, precision, variance-share and draw tables.
    Fit {
        /// Model label (e.g. Vb); defaults to the first configured spec.
        #[arg(long, value_parser = parse_spec)]
        model: Option<ModelSpec>,
    },
    /// Fit several models and write the comparison table.
    Compare {
        /// Model labels, or `all` for the twelve standard specs.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    /// Leave-area-period-out validation.
    Validate {
        #[arg(long, value_parser = parse_spec)]
        model: Option<ModelSpec>,
    },
    /// Fit and project U5MR beyond the last period.
    Project {
        #[arg(long, value_parser = parse_spec)]
        model: Option<ModelSpec>,
        /// Periods ahead (default: `[grid] horizon`).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Coverage study of the direct variance estimators, or the synthetic dataset.
    Simulate {
        /// Write the synthetic dataset to this directory instead.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

fn first_spec(cfg: &RunConfig, given: Option<ModelSpec>) -> anyhow::Result<ModelSpec> {
    match given {
        Some(mut s) => {
            s.marginal_prior = (cfg.model.a_marg, cfg.model.b_marg);
            Ok(s)
        }
        None => Ok(cfg.model.parse(&cfg.model.specs)?.remove(0)),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::empty(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Direct => commands::cmd_direct(&cfg),
        Command::Fit { model } => commands::cmd_fit(&cfg, &first_spec(&cfg, model)?),
        Command::Compare { models } => {
            let labels = models.unwrap_or_else(|| cfg.model.specs.clone());
            commands::cmd_compare(&cfg, &cfg.model.parse(&labels)?)
        }
        Command::Validate { model } => commands::cmd_validate(&cfg, &first_spec(&cfg, model)?),
        Command::Project { model, horizon } => {
            let h = horizon.unwrap_or(cfg.grid.horizon);
            commands::cmd_project(&cfg, &first_spec(&cfg, model)?, h)
        }
        Command::Simulate { dataset } => commands::cmd_simulate(&cfg, dataset.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
