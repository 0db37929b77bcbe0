use std::process::ExitCode;

use cellflow_cli::cli::Cli;
use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(cellflow_cli::run(&Cli::parse()))
}
