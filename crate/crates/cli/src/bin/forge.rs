use std::process::ExitCode;

use clap::Parser;
use duplex_cli::forge_cli::{run, ForgeArgs};

fn main() -> ExitCode {
    duplex_cli::init_logging();
    match run(ForgeArgs::parse(), &mut std::io::stdout()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
