use std::process::ExitCode;

use clap::Parser;
use edgerel::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for p in &outcome.artifacts {
                println!("{}", p.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: check failed", cli.command.name());
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
