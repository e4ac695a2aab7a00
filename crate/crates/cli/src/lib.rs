//! `sssa`: studies, verifications and toy training from the command line.
//!
//! Exit codes: 0 success, 1 a verification failed, 2 usage or configuration error.

mod commands;
mod config;
pub mod idx;
mod report;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;
use sssa_core::Error;

pub use commands::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Whether the checks a command performs held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    Failed,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Training { .. } | Error::Statistics(_) | Error::State(_) | Error::Tape(_) => EXIT_CHECK_FAILED,
        _ => EXIT_USAGE,
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match commands::execute(cli.command) {
        Ok(Outcome::Passed) => EXIT_OK,
        Ok(Outcome::Failed) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
