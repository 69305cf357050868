use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod output;

use config::Overrides;

/// Skill-chaining planner: plan, mine connector problems, filter plans by
/// noisy replay, export datasets and benchmark planners.
#[derive(Parser)]
#[command(name = "skillrrt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan every generated problem and write plan files plus a summary CSV.
    Plan(Args),
    /// Plan lazily and collect connector problems as JSON lines.
    Mine(Args),
    /// Replay plan files under noise and keep the reliable ones.
    Filter(Args),
    /// Record observation-action pairs from the kept plans.
    Export(Args),
    /// Compare planners on the same problem suite.
    Bench(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Base seed for every derived random stream
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Samples per planner iteration; also the batch size used by `bench`.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Planner iteration budget per problem
    #[arg(long)]
    n_max: Option<usize>,
    /// Replay success threshold.
    #[arg(long)]
    m: Option<f64>,
    /// Replays per plan.
    #[arg(long)]
    replays: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SKILLRRT_LOG", "warn")).init();
    let cli = Cli::parse();
    let (run, args): (fn(&config::Loaded) -> Result<(), error::CliError>, Args) = match cli.command {
        Command::Plan(a) => (commands::plan, a),
        Command::Mine(a) => (commands::mine, a),
        Command::Filter(a) => (commands::filter, a),
        Command::Export(a) => (commands::export, a),
        Command::Bench(a) => (commands::bench, a),
    };
    let ov = Overrides {
        seed: args.seed,
        out: args.out,
        batch_size: args.batch_size,
        n_max: args.n_max,
        m: args.m,
        replays: args.replays,
    };
    match config::load(&args.config, &ov).and_then(|l| run(&l)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("skillrrt: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
