//! `sae-branch`: train TopK SAEs on layer activations and run the branch,
//! circuit, embedding and exemplar analyses on the result.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime or usage error.

mod analyze;
mod circuits;
mod embed;
mod examples;
mod gen_toy;
mod output;
mod train;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SAE_BRANCH_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "sae-branch",
    version,
    about = "TopK sparse autoencoders for branch specialization analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a layer manifest and its shards.
    Validate(validate::Args),
    /// Write a synthetic superposition dataset (shards + manifest).
    GenToy(gen_toy::Args),
    /// Train a TopK SAE on a manifest's shards or on the synthetic task.
    Train(train::Args),
    /// Per-branch decoder norm fractions and histograms.
    Analyze(analyze::Args),
    /// Strongest feature-to-feature edges through an inter-layer weight map.
    Circuits(circuits::Args),
    /// 2D neighbor embedding of decoder vectors.
    Embed(embed::Args),
    /// Dataset exemplars of one feature across activation levels.
    Examples(examples::Args),
}

/// Output directory flag shared by every writing command.
#[derive(clap::Args, Clone)]
pub struct OutArgs {
    /// Output directory [default: $SAE_BRANCH_OUT_DIR, else ./out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl OutArgs {
    pub fn resolve(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(a) => validate::run(&a),
        Command::GenToy(a) => gen_toy::run(&a).map(|_| ExitCode::SUCCESS),
        Command::Train(a) => train::run(&a).map(|_| ExitCode::SUCCESS),
        Command::Analyze(a) => analyze::run(&a).map(|_| ExitCode::SUCCESS),
        Command::Circuits(a) => circuits::run(&a).map(|_| ExitCode::SUCCESS),
        Command::Embed(a) => embed::run(&a).map(|_| ExitCode::SUCCESS),
        Command::Examples(a) => examples::run(&a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
