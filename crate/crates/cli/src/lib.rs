//! Experiment runner: dataset statistics, training sweeps over seeds,
//! feature-only evaluation and gradient checks, all driven by a flat
//! TOML config.

pub mod commands;
pub mod config;
pub mod pubmed;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use nodenet_core::synthetic::SyntheticSpec;

#[derive(Debug, Parser)]
#[command(
    name = "nodenet",
    version,
    about = "Graph-regularized node classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set loss.alpha_uu=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print node, edge, feature and class counts.
    Stats(ConfigArgs),
    /// Train one model per seed and write metrics, checkpoints and summaries.
    Train(ConfigArgs),
    /// Predict every node from a checkpoint using features only.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on toy graphs.
    Gradcheck(ConfigArgs),
    /// Print the effective config as flat TOML.
    ShowConfig(ConfigArgs),
    /// Convert Pubmed-Diabetes tab files to `.content`/`.cites`.
    ConvertPubmed {
        /// `NODE.paper.tab`
        #[arg(long)]
        nodes: PathBuf,
        /// `DIRECTED.cites.tab`
        #[arg(long)]
        cites: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "pubmed")]
        name: String,
    },
    /// Write a planted-partition citation dataset for demos and tests.
    Synthesize {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "synthetic")]
        name: String,
        #[arg(long, default_value_t = 600)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 400)]
        vocabulary: usize,
        #[arg(long, default_value_t = 0.3)]
        topic_strength: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Stats(args) => {
            commands::cmd_stats(&args.load()?)?;
        }
        Command::Train(args) => {
            let report = commands::cmd_train(&args.load()?)?;
            if report.diverged() > 0 {
                eprintln!(
                    "{} of {} seeds diverged",
                    report.diverged(),
                    report.seeds.len()
                );
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Eval { config, checkpoint } => {
            commands::cmd_eval(&config.load()?, &checkpoint)?;
        }
        Command::Gradcheck(args) => {
            let lines = commands::cmd_gradcheck(&args.load()?)?;
            if let Some(worst) = lines.iter().filter(|l| !l.passed()).max_by(|a, b| {
                a.report
                    .max_relative_error
                    .total_cmp(&b.report.max_relative_error)
            }) {
                eprintln!(
                    "gradient check failed; worst offender {} ({})",
                    worst.report.worst, worst.metric
                );
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::ShowConfig(args) => {
            print!("{}", args.load()?.to_flat_toml()?);
        }
        Command::ConvertPubmed {
            nodes,
            cites,
            out_dir,
            name,
        } => {
            commands::cmd_convert_pubmed(&nodes, &cites, &out_dir, &name)?;
        }
        Command::Synthesize {
            out_dir,
            name,
            nodes,
            classes,
            vocabulary,
            topic_strength,
            seed,
        } => {
            let spec = SyntheticSpec {
                num_nodes: nodes,
                num_classes: classes,
                vocabulary,
                topic_strength,
                seed,
                ..SyntheticSpec::default()
            };
            commands::cmd_synthesize(&spec, &out_dir, &name)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
