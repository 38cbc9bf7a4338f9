use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfql_cli::{execute, CliResult, Command, RunConfig, OUT_ENV};

#[derive(Parser)]
#[command(
    name = "mfql",
    version,
    about = "One-step MeanFlow policies with Q-learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the generative head on a 2-D toy density.
    TrainToy(ConfigArgs),
    /// Offline actor-critic training on a point-reach dataset.
    TrainRl(ConfigArgs),
    /// Roll out a saved checkpoint.
    Eval(ConfigArgs),
    /// Train every reformulation variant and tabulate W2.
    VariantsReport(ConfigArgs),
    /// Write a behaviour dataset for the point-reach task.
    GenDataset(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn run(cli: Cli) -> CliResult<()> {
    let (cmd, args) = match cli.command {
        Cmd::TrainToy(a) => (Command::TrainToy, a),
        Cmd::TrainRl(a) => (Command::TrainRl, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::VariantsReport(a) => (Command::VariantsReport, a),
        Cmd::GenDataset(a) => (Command::GenDataset, a),
    };
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for pair in &args.set {
        cfg.set(pair)?;
    }
    let out_env = std::env::var(OUT_ENV).ok();
    execute(cmd, &cfg, out_env.as_deref(), &mut std::io::stdout())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mfql: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
