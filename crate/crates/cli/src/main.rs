//! Pipeline driver with staged, resumable artifacts.
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 missing stage
//! prerequisite, 4 numerical failure, 1 anything else.

mod ablate;
mod config_io;
mod report;
mod sidecar;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "weakclass",
    about = "Weakly supervised text classification from class names alone",
    version
)]
struct Cli {
    /// Config file (TOML).
    #[arg(short, long, global = true, default_value = "weakclass.toml")]
    config: PathBuf,

    /// Override a config key, e.g. --set seed=7 --set synthetic.purity=0.8.
    /// May be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load (or synthesize) the corpus, segment it, and snapshot inputs.
    Prepare,
    /// Fill the token and static-word embedding caches.
    Embed,
    /// Execute the full pipeline: class representations, label ensemble,
    /// attention training, iterative feedback, pseudo dataset, predictions.
    Run,
    /// Evaluate ablation stages and sentence-weight modes.
    Ablate {
        /// Comma-separated weight modes to sweep.
        #[arg(long, value_delimiter = ',', default_values = ["equal", "centrality", "discriminative", "both"])]
        weight_mode: Vec<String>,
    },
    /// Re-export the pseudo dataset and final predictions from run artifacts.
    Export,
    /// Aggregate metrics into report.json and emit plots.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();

    let result = config_io::load_config(&cli.config, &cli.overrides).and_then(|cfg| {
        match &cli.command {
            Command::Prepare => stages::prepare(&cfg).map(|_| ()),
            Command::Embed => stages::embed(&cfg).map(|_| ()),
            Command::Run => stages::run(&cfg).map(|_| ()),
            Command::Ablate { weight_mode } => ablate::ablate(&cfg, weight_mode),
            Command::Export => stages::export(&cfg).map(|_| ()),
            Command::Report => report::report(&cfg),
        }
    });

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
