use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zcbf_cli::{cmd_simulate, cmd_sweep, cmd_verify, load_config, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "zcbf", version, about = "Barrier-function safety filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat-key configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Single closed-loop run: trajectory.csv and summary.csv.
    Simulate(RunArgs),
    /// Gain × disturbance grid: sweep.csv.
    Sweep(RunArgs),
    /// Numerical self-checks: verify.csv.
    Verify(RunArgs),
}

fn main() -> ExitCode {
    // Usage errors exit with 1; clap's own code 2 is reserved for unsafe runs.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    let (args, run): (&RunArgs, fn(&zcbf_cli::RunConfig) -> u8) = match &cli.command {
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Sweep(a) => (a, cmd_sweep),
        Command::Verify(a) => (a, cmd_verify),
    };
    let mut cfg = match load_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(EXIT_ERROR);
        }
    };
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    ExitCode::from(run(&cfg))
}
