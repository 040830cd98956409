use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use relfilter::adapter::TransformKind;
use relfilter::commands::{run, Command};
use relfilter::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "relfilter", version, about = "Relevance filtering pipeline for dense retrieval")]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_kind)]
    kind: Option<TransformKind>,
    /// Retrieved list length.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    target_recall: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    GenSynth,
    TrainEncoder,
    Embed,
    BuildIndex,
    TrainAdapter,
    Calibrate,
    Search,
    Evaluate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::GenSynth => Command::GenSynth,
            Cmd::TrainEncoder => Command::TrainEncoder,
            Cmd::Embed => Command::Embed,
            Cmd::BuildIndex => Command::BuildIndex,
            Cmd::TrainAdapter => Command::TrainAdapter,
            Cmd::Calibrate => Command::Calibrate,
            Cmd::Search => Command::Search,
            Cmd::Evaluate => Command::Evaluate,
        }
    }
}

fn parse_kind(s: &str) -> Result<TransformKind, String> {
    s.parse().map_err(|e: relfilter::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        kind: cli.kind,
        k: cli.k,
        target_recall: cli.target_recall,
        out: cli.out,
    };
    let result = RunConfig::resolve(cli.config.as_deref(), &overrides)
        .map_err(|e| e.at_stage("config"))
        .and_then(|cfg| run(cli.command.into(), &cfg));
    match result {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
