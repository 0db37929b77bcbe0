//! Command-line front end: configuration files, run orchestration,
//! snapshot persistence and plotting.
//!
//! Exit codes: 0 success, 1 I/O or data error, 2 run stopped by blow-up,
//! 3 invalid configuration, 4 numerical failure.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

use cli::{Cli, Command};
use commands::Outcome;
use error::{CliError, EXIT_BLOW_UP};

/// Runs one command and returns the process exit code.
pub fn run(cli: &Cli) -> u8 {
    let result: Result<Outcome, CliError> = match &cli.command {
        Command::Simulate(a) => commands::simulate(a).map(|(_, o)| o),
        Command::GenerateSynthetic(a) => commands::generate_synthetic(a).map(|(_, o)| o),
        Command::Estimate(a) => commands::estimate_cmd(a).map(|(m, o)| {
            println!("{}", m.diagnostics);
            o
        }),
        Command::Sensitivity(a) => commands::sensitivity_cmd(a).map(|(_, o)| o),
        Command::Plot(a) => plot::plot(a).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
            Outcome::Completed
        }),
    };
    match result {
        Ok(Outcome::Completed) => 0,
        Ok(Outcome::BlowUp) => {
            eprintln!("run stopped: blow-up detected (see manifest.json)");
            EXIT_BLOW_UP
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
