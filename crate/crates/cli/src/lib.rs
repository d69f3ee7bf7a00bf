//! Command line and HTTP front ends for the soundmorph toolkit.

pub mod commands;
pub mod config;
pub mod error;
pub mod runs;
pub mod server;

use clap::error::ErrorKind;
use clap::Parser;

pub use error::{CliError, CliResult};

/// Parses `argv`, runs the command and returns the process exit code.
/// Failures end with one JSON line on standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match commands::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{}", e.render());
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Usage(first).to_line());
            return 2;
        }
    };
    match commands::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            1
        }
    }
}
