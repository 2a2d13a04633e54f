mod commands;
mod jsonlog;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use morpheus::Error;

use commands::{Command, Overrides};

#[derive(Parser)]
#[command(name = "morpheus", version, about = "Masked multimodal pre-training on slides and omics")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Write a synthetic cohort with known cross-modal structure.
    SynthData(Common),
    /// Masked pre-training; resumes when given a checkpoint.
    Pretrain(Common),
    /// Few-shot subtype classification; from scratch without a checkpoint.
    FinetuneSubtype(Common),
    /// Cross-validated discrete-time survival fine-tuning.
    FinetuneSurvival(Common),
    /// Reconstruct omics from slides plus other omics and score them.
    Generate(Common),
    /// Score reconstructions and the direction of change between subtypes.
    Evaluate(Common),
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides `seed` and `synth.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model checkpoint to resume or fine-tune from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Validate and print the plan without running it.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Validation { .. }
        | Error::Shape(_)
        | Error::Checkpoint(_)
        | Error::Io { .. }
        | Error::Format { .. } => 3,
        Error::NonFinite(_) | Error::Undefined(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let (cmd, c) = match cli.command {
        Sub::SynthData(c) => (Command::SynthData, c),
        Sub::Pretrain(c) => (Command::Pretrain, c),
        Sub::FinetuneSubtype(c) => (Command::FinetuneSubtype, c),
        Sub::FinetuneSurvival(c) => (Command::FinetuneSurvival, c),
        Sub::Generate(c) => (Command::Generate, c),
        Sub::Evaluate(c) => (Command::Evaluate, c),
    };
    if let Some(n) = c.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let overrides = Overrides {
        config: c.config,
        seed: c.seed,
        out: c.out,
        checkpoint: c.checkpoint,
        force: c.force,
        dry_run: c.dry_run,
    };
    match commands::run(cmd, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
