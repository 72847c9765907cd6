//! `tacstack`: dataset generation, training, evaluation and stacking runs.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Context;
use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "tacstack", version, about = "Tactile contact patch estimation and stacking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Existing directory that receives every output file.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate training and held-out datasets.
    GenData,
    /// Train patch models per modality and the implicit classifier.
    Train,
    /// Patch IoU and accuracy per modality (table1.tsv).
    Eval,
    /// Stability accuracy vs probes and stacking episodes (table2/3, fig6, logs).
    Episodes,
    /// Signal distribution records (signals.tsv).
    PlotData,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.validate()?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    commands::check_out_dir(&cli.out)?;
    let ctx = Context {
        hash: cfg.hash(),
        cfg,
        out: cli.out,
    };
    match cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::Train => commands::train_models(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Episodes => commands::episodes(&ctx),
        Command::PlotData => commands::plot_data(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
