use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;

use config::FileConfig;

#[derive(Parser)]
#[command(name = "corpuslab", version, about = "Corpus selection, checkpoint merging and judge arena toolkit")]
struct Cli {
    /// Seed for every random choice made by the subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory receiving outputs and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// TOML file with scorer/shots/elo/serve defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score multiple-choice datasets with a backend.
    Eval(commands::eval::EvalArgs),
    /// Average results and select corpora that beat the base model.
    Select(commands::select::SelectArgs),
    /// Linearly merge TSTOR1 checkpoints.
    Merge(commands::merge::MergeArgs),
    /// ELO, win percentage and correlation matrices from a vote log.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Run the blind judging service.
    Serve(commands::serve::ServeArgs),
    /// Write the fine-tuning hyperparameters.
    TrainConfig,
}

/// Flags shared by subcommands that compute ELO.
#[derive(Args, Debug, Clone, Default)]
pub struct EloArgs {
    #[arg(long)]
    initial_rating: Option<f64>,
    #[arg(long)]
    k_factor: Option<f64>,
    #[arg(long)]
    logistic_scale: Option<f64>,
    /// Random orderings averaged over.
    #[arg(long)]
    permutations: Option<usize>,
}

impl EloArgs {
    pub fn resolve(&self, file: &FileConfig, seed: u64) -> corpuslab_core::EloConfig {
        let d = corpuslab_core::EloConfig::default();
        corpuslab_core::EloConfig {
            initial_rating: self.initial_rating.or(file.elo.initial_rating).unwrap_or(d.initial_rating),
            k_factor: self.k_factor.or(file.elo.k_factor).unwrap_or(d.k_factor),
            logistic_scale: self.logistic_scale.or(file.elo.logistic_scale).unwrap_or(d.logistic_scale),
            n_permutations: self.permutations.or(file.elo.n_permutations).unwrap_or(d.n_permutations),
            seed,
        }
    }
}

pub struct Globals {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub file: FileConfig,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let globals = Globals {
        seed: cli.seed,
        out_dir: cli.out_dir,
        file: FileConfig::load(cli.config.as_deref())?,
    };
    match cli.command {
        Command::Eval(args) => commands::eval::run(&globals, args),
        Command::Select(args) => commands::select::run(&globals, args),
        Command::Merge(args) => commands::merge::run(&globals, args),
        Command::Analyze(args) => commands::analyze::run(&globals, args),
        Command::Serve(args) => commands::serve::run(&globals, args),
        Command::TrainConfig => commands::train_config::run(&globals),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
