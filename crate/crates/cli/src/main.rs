//! `f4`: train, quantize, compress, simulate and report on 4-bit MLPs.

mod commands;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use f4_core::codec::ContainerError;
use f4_core::datapath::DatapathError;
use f4_core::pipeline::{PipelineError, Preset};

#[derive(Parser, Debug)]
#[command(name = "f4", version, about = "4-bit compact MLP toolchain")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file; flags win.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// lenet-300-100, mlp-hr, mlp-gsc or custom.
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    /// Rate-distortion trade-off for code assignment.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent directory of the timestamped run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CostFlags {
    #[arg(long)]
    pub c_add: Option<f64>,
    #[arg(long)]
    pub c_mul: Option<f64>,
    #[arg(long)]
    pub c_fifo: Option<f64>,
    #[arg(long)]
    pub c_offchip: Option<f64>,
    #[arg(long)]
    pub c_onchip: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full-precision training, then straight-through fine-tuning.
    Train,
    /// Codebooks and entropy-constrained codes for a float checkpoint.
    Quantize {
        /// `fp_model.json` or a run directory containing it.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compiles a quantized checkpoint into a model container and size report.
    Compress {
        /// `quantized.json` or a run directory containing it.
        #[arg(long)]
        checkpoint: PathBuf,
        /// hybrid or csr-only.
        #[arg(long, default_value = "hybrid")]
        mode: f4_core::codec::CompressionMode,
    },
    /// Runs test samples through the integer datapath and tallies cost.
    Simulate {
        /// `model.f4` or a run directory containing it.
        #[arg(long)]
        model: PathBuf,
        /// Quantized checkpoint to score as the float reference.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Also write per-sample, per-layer trace events.
        #[arg(long)]
        events: bool,
        #[command(flatten)]
        cost: CostFlags,
    },
    /// Train, compress and simulate in one run directory.
    Run {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[command(flatten)]
        cost: CostFlags,
    },
    /// Summarises every run below a directory as CSV and markdown.
    Report {
        /// Directory holding run directories.
        dir: PathBuf,
    },
}

/// Errors with a known exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn container_exit_code(e: &ContainerError) -> u8 {
    match e {
        ContainerError::Codec { .. } | ContainerError::Layer { .. } => EXIT_INTERNAL,
        _ => EXIT_DATA,
    }
}

fn datapath_exit_code(e: &DatapathError) -> u8 {
    match e {
        DatapathError::Dim { .. } => EXIT_DATA,
        DatapathError::Container(c) => container_exit_code(c),
        _ => EXIT_INTERNAL,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Data(_) => EXIT_DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            match e {
                PipelineError::Config(_) | PipelineError::Cost(_) => return EXIT_USAGE,
                PipelineError::Dataset(_) | PipelineError::Io { .. } => return EXIT_DATA,
                // Transparent variants: the chain skips the wrapped error.
                PipelineError::Container(e) => return container_exit_code(e),
                PipelineError::Datapath(e) => return datapath_exit_code(e),
                _ => return EXIT_INTERNAL,
            }
        }
        if let Some(e) = cause.downcast_ref::<ContainerError>() {
            return container_exit_code(e);
        }
        if let Some(e) = cause.downcast_ref::<DatapathError>() {
            return datapath_exit_code(e);
        }
        if cause.is::<serde_json::Error>() || cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_INTERNAL
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train => commands::train(&cli.common),
        Command::Quantize { checkpoint } => commands::quantize(&cli.common, &checkpoint),
        Command::Compress { checkpoint, mode } => commands::compress(&cli.common, &checkpoint, mode),
        Command::Simulate {
            model,
            reference,
            samples,
            events,
            cost,
        } => commands::simulate(&cli.common, &model, reference.as_deref(), samples, events, &cost),
        Command::Run { samples, cost } => commands::run(&cli.common, samples, &cost),
        Command::Report { dir } => commands::report(&cli.common, &dir),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
