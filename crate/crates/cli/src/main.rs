//! `spectrascope` command-line front end.

mod args;
mod commands;
mod error;
mod output;
mod source;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn run(cli: &Cli) -> Result<(), CliError> {
    let out = output::Output::new(&cli.out, cli.format)?;
    match &cli.command {
        Command::Spectrum(a) => commands::spectrum::run(a, cli.seed, &out),
        Command::Attribute(a) => commands::attribute::run(a, cli.seed, &out),
        Command::CcmVerify(a) => commands::ccm_verify::run(a, cli.seed, &out),
        Command::KfacCompare(a) => commands::kfac_compare::run(a, cli.seed, &out),
        Command::Train(a) => commands::train::run(a, cli.seed, &out),
        Command::Decompose(a) => commands::decompose::run(a, cli.seed, &out),
    }
}

#[cfg(feature = "parallel")]
fn run_with_threads(cli: &Cli) -> Result<(), CliError> {
    match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?
            .install(|| run(cli)),
        None => run(cli),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_with_threads(cli: &Cli) -> Result<(), CliError> {
    run(cli)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_with_threads(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
