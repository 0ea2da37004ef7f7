use std::process::ExitCode;

use swis::commands::{run_from, CliError};

fn main() -> ExitCode {
    match run_from(std::env::args()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(CliError::Clap(e)) => e.exit(),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
