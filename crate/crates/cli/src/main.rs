//! `halknob`: file-based pipeline over the halknob-core library.

mod args;
mod commands;
mod error;
mod manifest;

use clap::Parser;

use crate::args::Cli;
use crate::error::CliError;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::new(error::Kind::Other, e.to_string()))?;
    }
    log::debug!("running {}", cli.command.name());
    commands::run(&cli.command)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    init_logging(cli.verbose);
    if let Err(e) = run(&cli) {
        eprintln!("{}", e.render());
        std::process::exit(e.kind.exit_code());
    }
}
