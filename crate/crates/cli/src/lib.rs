//! Command-line driver: data forging, training, scoring and evaluation of
//! panel-of-experts checkpoints. Every command writes a `manifest.json`
//! into its output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use clap::Parser;

pub use commands::Cli;
pub use error::{CliError, ExitKind};

/// Runs one command and returns the process exit code: 0 on success,
/// 2 usage, 3 data schema, 4 checkpoint, 5 numerical failure, 1 other I/O.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                ExitKind::Usage as i32
            } else {
                0
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
