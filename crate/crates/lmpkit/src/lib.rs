//! IO, file formats, and the experiment CLI wrapped around `lmpkit-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod report;
pub mod tensor_io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, ExperimentConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "lmpkit",
    about = "Synthetic-scale keypoint discovery experiments: dataset generation, \
             training with generalized global pooling, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set train.epochs=5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overrides output_dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = load_config(&self.config, &self.set)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.display().to_string();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the synthetic dataset plus manifests.
    Gen(ConfigArgs),
    /// Train the primary network (and replica when mask-out is enabled).
    Train(ConfigArgs),
    /// Greedy-PCK evaluation of a trained checkpoint over the test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint directory (a `checkpoints/` root or a bare model dir).
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Feature-map entropy comparison across checkpoints.
    Entropy {
        #[command(flatten)]
        config: ConfigArgs,
        /// One or more checkpoint directories.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
    },
    /// Print the dense/sparse table for all pooling kernels.
    Pooldemo,
    /// Emit the analytic FLOP report as JSON.
    Flops {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Runs the CLI on explicit arguments. `argv[0]` must be the program name.
pub fn run_from<I, S>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            return Err(CliError::Config {
                message: e.to_string(),
                path: None,
            })
        }
    };
    match cli.command {
        Command::Gen(args) => commands::cmd_gen(&args.load()?),
        Command::Train(args) => commands::cmd_train(&args.load()?),
        Command::Eval { config, checkpoint } => commands::cmd_eval(&config.load()?, &checkpoint),
        Command::Entropy { config, checkpoint } => {
            commands::cmd_entropy(&config.load()?, &checkpoint)
        }
        Command::Pooldemo => commands::cmd_pooldemo(),
        Command::Flops { config, checkpoint } => {
            commands::cmd_flops(&config.load()?, checkpoint.as_deref())
        }
    }
}

/// Entry point for the binary: parses `std::env::args`.
pub fn run() -> Result<(), CliError> {
    run_from(std::env::args_os())
}
