//! `moc` — memory profiles, gradient checks, embedding verification, paired
//! training runs, decode benchmarks and activation statistics for the
//! Mixture-of-Channels FFN, driven by a JSON config or a bundled preset.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod matfile;

use config::{OutputFormat, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// A verification failed (exit 1).
    Check(String),
    /// Filesystem trouble while writing results (exit 1).
    Io(String),
}

#[derive(Parser)]
#[command(name = "moc", version, about = "Mixture-of-Channels FFN experiments")]
struct Cli {
    /// JSON run configuration; overrides --preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Bundled shape preset: 60m, 130m, 350m or 1b (default 350m).
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Override train.seed and embed.seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Write the result document here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Result document format.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Activation-memory model for all four FFN variants, side by side.
    Profile,
    /// Finite-difference checks of the dense and masked backward passes.
    GradCheck {
        /// Corrupt one gradient entry first; the run must then fail.
        #[arg(long)]
        corrupt: bool,
    },
    /// Verify the FFN-into-MoC embedding numerically.
    EmbedVerify,
    /// Paired dense-vs-MoC teacher regression; emits the loss curves.
    Train {
        /// Also write the trained MoC student's gate activations (matrix
        /// file) for the stats command.
        #[arg(long, value_name = "PATH")]
        dump_gate: Option<PathBuf>,
    },
    /// Per-token MAC/weight-traffic model plus a decode consistency probe.
    InferBench,
    /// Distribution statistics of a saved matrix.
    Stats {
        /// Matrix file to analyze.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, default_value_t = 64)]
        bins: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::preset("350m")?,
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.embed.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.path = Some(out.clone());
    }
    if let Some(format) = cli.format {
        cfg.output.format = format;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Profile => commands::cmd_profile(&cfg),
        Command::GradCheck { corrupt } => commands::cmd_grad_check(&cfg, *corrupt),
        Command::EmbedVerify => commands::cmd_embed_verify(&cfg),
        Command::Train { dump_gate } => commands::cmd_train(&cfg, dump_gate.as_deref()),
        Command::InferBench => commands::cmd_infer_bench(&cfg),
        Command::Stats { input, bins } => commands::cmd_stats(&cfg, input, *bins),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("io error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
