use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mk_plane_cli::commands;
use mk_plane_cli::config::{parse_config, Overrides};

/// Planar 2-Wasserstein couplings through an elliptic Dirichlet problem.
///
/// Exit codes: 0 success, 1 error or failed criterion, 2 Picard iteration
/// did not converge.
#[derive(Parser)]
#[command(name = "mk-plane", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance and write the report and grid dumps.
    Solve(Overrides),
    /// Run the acceptance criteria on the built-in presets.
    Validate(Overrides),
    /// One-dimensional distances between the marginals.
    Distance1d(Overrides),
    /// Exact discrete transport and the direct minimizer.
    Oracle(Overrides),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (flags, run): (_, fn(&_) -> _) = match &cli.command {
        Command::Solve(f) => (f, commands::run_solve),
        Command::Validate(f) => (f, commands::run_validate),
        Command::Distance1d(f) => (f, commands::run_distance1d),
        Command::Oracle(f) => (f, commands::run_oracle),
    };
    match parse_config(flags).and_then(|cfg| run(&cfg)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
