use std::process::ExitCode;

use clap::Parser;
use duplex_cli::harness_cli::{run, HarnessArgs};

fn main() -> ExitCode {
    duplex_cli::init_logging();
    match run(HarnessArgs::parse(), &mut std::io::stdout()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
