mod args;
mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::config::{resolve, ResolveError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match resolve(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(ResolveError::Clap(e)) => e.exit(),
        Err(ResolveError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let recorded = &argv[1..];
    let result = cloudformer::par::with_jobs(cli.jobs, || commands::execute(&cli.command, recorded));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
