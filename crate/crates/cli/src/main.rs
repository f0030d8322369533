//! `gridtrip`: batch frontend for the co-simulation and calibration pipeline.
//!
//! Exit codes: 0 success, 2 configuration or argument problems, 3 file and
//! serialization problems, 4 numerical failures.

mod cmd;
mod config;

use std::process::ExitCode;

use clap::Parser;
use gridtrip_core::CoreError;

fn main() -> ExitCode {
    let cli = config::Cli::parse();
    match cmd::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_class(&e))
        }
    }
}

fn exit_class(e: &CoreError) -> u8 {
    if e.is_config() {
        2
    } else if e.is_io() {
        3
    } else {
        4
    }
}
