//! `hop`: synthetic data, training, generation, evaluation and inspection
//! driven by JSON config files.

mod commands;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "hop", version, about = "Co-speech gesture generation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic corpus and print its hash.
    SynthData(CommonArgs),
    /// Train a model on a manifest, checkpointing every epoch.
    Train(CommonArgs),
    /// Generate one pose sequence per clip from a checkpoint.
    Generate(CommonArgs),
    /// Score generated poses with FGD, beat consistency and diversity.
    Evaluate(CommonArgs),
    /// Dump the learned adjacency, attention maps or text alignment.
    Inspect(CommonArgs),
}

#[derive(Args, Clone, Debug)]
pub struct CommonArgs {
    /// JSON config for the command.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Only log errors.
    #[arg(long)]
    pub quiet: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let (run, args): (fn(&CommonArgs) -> error::Result<()>, &CommonArgs) = match &cli.command {
        Command::SynthData(a) => (commands::synth_data, a),
        Command::Train(a) => (commands::train, a),
        Command::Generate(a) => (commands::generate, a),
        Command::Evaluate(a) => (commands::evaluate, a),
        Command::Inspect(a) => (commands::inspect, a),
    };
    env_logger::Builder::new()
        .filter_level(if args.quiet {
            log::LevelFilter::Error
        } else {
            log::LevelFilter::Info
        })
        .format_timestamp(None)
        .init();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
