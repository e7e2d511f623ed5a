//! Operator-facing command line: one TOML config, reproducible seeds, and a
//! manifest next to every artifact.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 training diverged,
//! 5 internal, 64 usage. A failed gradient check exits 1. Every error is
//! also reported as one JSON object on stderr.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use epcfusion_core::Result;

#[derive(Parser)]
#[command(name = "epcfusion", version, about = "Gated multimodal SAP/EI pipeline")]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed override; beats both EPCFUSION_SEED and the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and link the dataset, writing row-quality counters.
    Ingest,
    /// Write a joint-stratified train/val/test split.
    Split,
    /// Train the full-modality model and write a checkpoint.
    Train,
    /// Evaluate the checkpoint on the test split.
    Evaluate,
    /// Train and evaluate every non-empty modality subset.
    Ablate,
    /// Attribution and diagnostics over a trained checkpoint.
    Explain {
        #[arg(value_enum)]
        kind: ExplainKind,
        /// Test rows analyzed by shapley and saliency.
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Training rows behind the shapley baseline.
        #[arg(long, default_value_t = 32)]
        background: usize,
    },
    /// Score a retrofit scenario file against the checkpoint.
    Scenario {
        /// Scenario description (JSON).
        file: PathBuf,
    },
    /// Compare model gradients against finite differences.
    Gradcheck,
    /// Generate the synthetic benchmark dataset.
    Synth {
        /// Records to generate.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Target directory; defaults to the directory of the configured
        /// properties file.
        #[arg(long, value_name = "DIR")]
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExplainKind {
    /// Exact Shapley attribution of the tabular features.
    Shapley,
    /// Text-field occlusion deltas.
    Occlusion,
    /// Gate weight distribution over the test split.
    Gates,
    /// Permutation importance of the spatial numerics.
    Spatial,
    /// Boundary-swap permutation test.
    Boundary,
    /// Per-vertex input saliency.
    Saliency,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            let report = serde_json::json!({
                "error": "usage",
                "message": e.to_string(),
                "exit_code": 64,
            });
            eprintln!("{report}");
            std::process::exit(64);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            let report = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{report}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let cfg = config::load(cli.config.as_deref(), cli.seed, cli.output.as_deref())?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg)?,
        Command::Split => commands::split(&cfg)?,
        Command::Train => commands::train(&cfg)?,
        Command::Evaluate => commands::evaluate(&cfg)?,
        Command::Ablate => commands::ablate(&cfg)?,
        Command::Explain {
            kind,
            samples,
            background,
        } => commands::explain(&cfg, kind, samples, background)?,
        Command::Scenario { file } => commands::scenario(&cfg, &file)?,
        Command::Gradcheck => return commands::gradcheck(&cfg),
        Command::Synth { n, dir } => commands::synth(&cfg, n, dir.as_deref())?,
    }
    Ok(0)
}
