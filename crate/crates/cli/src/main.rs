use std::process::ExitCode;

use clap::Parser;
use probshield_cli::error::{EXIT_OK, EXIT_VALIDATION};
use probshield_cli::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap reports usage errors with 2, which is taken by infeasibility
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK });
        }
    };
    match probshield_cli::run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
