//! Batch frontend: `estimate`, `simulate`, `sensitivity` and `diagnose`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 numerical failure.

mod args;
mod commands;
mod config;
mod error;
pub mod io;

use std::ffi::OsString;

use clap::Parser;

pub use args::Format;
pub use commands::{parse_grid, CURVE_HEADER, TOOL_VERSION};
pub use error::{CliError, CliResult};

use args::{Cli, Command};

fn execute(cli: Cli) -> CliResult<()> {
    let name = cli.command.name();
    match cli.command {
        Command::Estimate(a) => {
            let a = config::merge(&a, a.run.config.as_deref(), name)?;
            commands::threads_pool(a.run.threads)?.install(|| commands::estimate_cmd(&a))
        }
        Command::Simulate(a) => {
            let a = config::merge(&a, a.run.config.as_deref(), name)?;
            commands::threads_pool(a.run.threads)?.install(|| commands::simulate_cmd(&a))
        }
        Command::Sensitivity(a) => {
            let a = config::merge(&a, a.run.config.as_deref(), name)?;
            commands::threads_pool(a.run.threads)?.install(|| commands::sensitivity_cmd(&a))
        }
        Command::Diagnose(a) => {
            let a = config::merge(&a, a.run.config.as_deref(), name)?;
            commands::threads_pool(a.run.threads)?.install(|| commands::diagnose_cmd(&a))
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors are reported on standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("atme: error: {e}");
            e.exit_code()
        }
    }
}
