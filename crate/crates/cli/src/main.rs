//! `zsaudio` experiment driver.

mod artifacts;
mod commands;
mod config;
mod selection;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zsaudio::{Error, ErrorKind};

use crate::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "zsaudio", version, about = "Zero-shot audio tagging and classification experiments")]
struct Cli {
    /// TOML file overriding the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset: audioset-fold, esc50, openmic-inst, openmic-mic or toy.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "zsaudio-out")]
    out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Balance the vocabulary into class folds.
    FoldSplit,
    /// Pretrain one backbone per seed on the training classes.
    Pretrain {
        /// Continue from existing checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Fit the cross-modal projection on frozen backbone embeddings.
    TrainProjection {
        /// Directory holding the backbone checkpoints (default: --out).
        #[arg(long)]
        backbones: Option<PathBuf>,
    },
    /// Score the zero-shot classes and write a report.
    Evaluate {
        /// Directory holding backbone and projection checkpoints (default: --out).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Write the synthetic tone corpus.
    Synth,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn run(cli: &Cli) -> zsaudio::Result<Vec<PathBuf>> {
    let threads = if cli.deterministic { 1 } else { cli.threads };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cfg = ExperimentConfig::load(cli.config.as_deref(), cli.preset.as_deref())?;
    let seeds = match cli.seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let out = &cli.out;
    Ok(match &cli.command {
        Command::FoldSplit => vec![commands::fold_split(&cfg, out)?],
        Command::Pretrain { resume } => commands::pretrain(&cfg, out, &seeds, *resume)?,
        Command::TrainProjection { backbones } => {
            commands::train_projection_cmd(&cfg, out, backbones.as_deref().unwrap_or(out), &seeds)?
        }
        Command::Evaluate { checkpoints } => {
            vec![commands::evaluate(&cfg, out, checkpoints.as_deref().unwrap_or(out), &seeds)?]
        }
        Command::Synth => vec![commands::synth(&cfg, out, seeds[0])?],
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
