//! Batch front end: generate synthetic data, fit, decompose, funnel
//! analysis and reports.

pub mod commands;
pub mod config;
pub mod fitfile;
pub mod output;
pub mod plots;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use commands::{cmd_decompose, cmd_fit, cmd_funnel, cmd_generate, cmd_report, Context, FunnelMode};
pub use config::RunConfig;
pub use fitfile::FitFile;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("not converged (R-hat above threshold for: {})", .params.join(", "))]
    NotConverged { params: Vec<String> },
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 0 success, 1 other failure, 2 config/usage, 3 convergence,
    /// 4 artifact mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NotConverged { .. } => 3,
            CliError::Mismatch(_) => 4,
            CliError::Io(_) | CliError::Failed(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kinetic-mmm", version, about = "Marketing-mix models with Michaelis-Menten saturation and collision mixing")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides both the generator and the sampler seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its ground truth.
    Generate,
    /// Fit a model and write draws, diagnostics and fit metrics.
    Fit {
        /// Dataset CSV (overrides `data.path`).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        /// Exit 0 even when some R-hat exceeds the threshold.
        #[arg(long)]
        allow_nonconverged: bool,
    },
    /// Per-channel contribution matrix and contribution shares.
    Decompose {
        #[command(flatten)]
        input: FitInput,
    },
    /// Collision-coefficient estimates and donor/receiver ranking.
    Funnel {
        #[command(flatten)]
        input: FitInput,
        #[arg(long, value_enum, default_value_t = ModeArg::NParticle)]
        mode: ModeArg,
    },
    /// Metrics, economics table, saturation regions and optional plots.
    Report {
        #[command(flatten)]
        input: FitInput,
        #[arg(long)]
        plots: bool,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct FitInput {
    /// Fit file (default: `<out>/fit.json`).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Dataset CSV (default: the path recorded in the fit file).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pairwise,
    NParticle,
}

impl From<ModeArg> for FunnelMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pairwise => FunnelMode::Pairwise,
            ModeArg::NParticle => FunnelMode::NParticle,
        }
    }
}

/// Parse-free entry point used by `main`.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.generator.seed = s;
        cfg.sampler.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    let mut ctx = Context::new(cfg, cli.quiet);
    match cli.command {
        Command::Generate => cmd_generate(&ctx).map(|_| ()),
        Command::Fit {
            data,
            variant,
            chains,
            draws,
            warmup,
            allow_nonconverged,
        } => {
            let c = &mut ctx.cfg;
            if let Some(d) = data {
                match &mut c.data {
                    Some(dc) => dc.path = d,
                    None => return Err(CliError::Config("--data needs a [data] section with the column mapping".into())),
                }
            }
            if let Some(v) = variant {
                c.model.variant = v.parse().map_err(|e| CliError::Config(format!("--variant: {e}")))?;
            }
            if let Some(n) = chains {
                c.sampler.chains = n;
            }
            if let Some(n) = draws {
                c.sampler.draws = n;
            }
            if let Some(n) = warmup {
                c.sampler.warmup = n;
            }
            c.validate()?;
            cmd_fit(&ctx, allow_nonconverged).map(|_| ())
        }
        Command::Decompose { input } => cmd_decompose(&ctx, input.fit.as_deref(), input.data.as_deref()).map(|_| ()),
        Command::Funnel { input, mode } => {
            cmd_funnel(&ctx, input.fit.as_deref(), input.data.as_deref(), mode.into()).map(|_| ())
        }
        Command::Report { input, plots } => {
            ctx.cfg.plots |= plots;
            cmd_report(&ctx, input.fit.as_deref(), input.data.as_deref()).map(|_| ())
        }
    }
}
