use std::panic;
use std::process::ExitCode;

use clap::Parser;
use idepnn::cli::{self, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match panic::catch_unwind(|| cli::run(cli)) {
        Ok(Ok(())) => ExitCode::from(cli::EXIT_OK as u8),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
        Err(_) => ExitCode::from(cli::EXIT_INTERNAL as u8),
    }
}
