//! `csdro` — command-line front end for the csdro library.
//!
//! Every subcommand reads one flat `key = value` config file, writes
//! CSV artifacts stamped with the seed and a hash of the fully resolved
//! configuration, and exits 0 on success, 1 on a validation error
//! (bad config, bad input file), or 2 on a runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use csdro_cli::commands::{
    cmd_benchmark, cmd_generate, cmd_interpret, cmd_portfolio, cmd_train, cmd_worstcase,
    with_worker_pool,
};
use csdro_cli::config::Config;
use csdro_cli::CliResult;

#[derive(Parser)]
#[command(
    name = "csdro",
    version,
    about = "Causal Sinkhorn distributionally robust decision rules",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the flat key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV artifacts (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel sections (0 = number of cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Override the seed(s) in the config file with a single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV with provenance.
    Generate(CommonArgs),
    /// Train one decision rule and export the policy file and trace.
    Train(CommonArgs),
    /// Sweep models over a parameter grid against a paired ERM baseline.
    Benchmark(CommonArgs),
    /// Export the worst-case distribution of a trained policy.
    Worstcase(CommonArgs),
    /// Export interpretability reports for a trained forest policy.
    Interpret(CommonArgs),
    /// Rolling-horizon portfolio backtest with standard comparators.
    Portfolio(CommonArgs),
}

fn run(cmd: &Command) -> CliResult<()> {
    let (args, body): (&CommonArgs, fn(&Config, &std::path::Path) -> CliResult<()>) = match cmd {
        Command::Generate(a) => (a, cmd_generate),
        Command::Train(a) => (a, cmd_train),
        Command::Benchmark(a) => (a, cmd_benchmark),
        Command::Worstcase(a) => (a, cmd_worstcase),
        Command::Interpret(a) => (a, cmd_interpret),
        Command::Portfolio(a) => (a, cmd_portfolio),
    };
    // The config's consumed-key tracker is single-threaded state, so the
    // config is created and used entirely inside the pool's root task.
    with_worker_pool(args.workers, || {
        let mut cfg = Config::load(&args.config)?;
        cfg.override_seed(args.seed);
        body(&cfg, &args.out)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits; anything else is a
            // validation error (exit 1, not clap's default 2 — exit 2
            // is reserved for runtime failures).
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
