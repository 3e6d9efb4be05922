use clap::{Parser, Subcommand};
use freedom::cli;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "freedom",
    version,
    about = "Multimodal graph recommender: frozen item-item graph, degree-sensitive edge pruning"
)]
struct Cli {
    /// Path to a key=value run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Variant to run: freedom, freedom_f, freedom_r, freedom_0, lattice_frozen.
    #[arg(long, global = true)]
    ablation: Option<String>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, densify, and split raw interactions.
    Prepare,
    /// Train on a prepared dataset and write checkpoint, metrics, and results.
    Train,
    /// Evaluate a saved checkpoint on the test split.
    Eval,
    /// Report eigenvalue estimates for the item graphs.
    Spectral,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Cli::parse();
    let config = match cli::load_config(
        args.config.as_deref(),
        args.seed,
        args.ablation.as_deref(),
        args.out.as_deref(),
    ) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let result = match args.command {
        Command::Prepare => cli::cmd_prepare(&config),
        Command::Train => cli::cmd_train(&config).map(|_| ()),
        Command::Eval => cli::cmd_eval(&config).map(|_| ()),
        Command::Spectral => cli::cmd_spectral(&config).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
