//! Command-line entry point for the whole pipeline: assemble, run,
//! campaign, train, eval, sweep, report. Stages couple only through files,
//! so every intermediate artifact is inspectable.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 internal invariant violation.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version are not errors
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(err)) => {
            eprintln!("internal invariant violated: {err:#}");
            ExitCode::from(3)
        }
    }
}
