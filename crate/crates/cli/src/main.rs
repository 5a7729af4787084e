use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qcurv_cli::{execute, Command, Overrides};

#[derive(Parser)]
#[command(name = "qcurv", version, about = "Radial Q-curvature laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for every alpha in the config and write solution, trace and diagnostics.
    Solve(Common),
    /// Run the kernel, background and inequality invariant checks.
    Verify(Common),
    /// Solve over the alpha list and aggregate into sweep.csv.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Seed for the randomized checks, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, c) = match cli.command {
        Cmd::Solve(c) => (Command::Solve, c),
        Cmd::Verify(c) => (Command::Verify, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
    };
    let ov = Overrides { out: c.out, workers: c.workers, seed: c.seed };
    std::process::exit(execute(cmd, &c.config, &ov));
}
