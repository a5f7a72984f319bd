use clap::Parser;
use std::process::ExitCode;

fn main() -> ExitCode {
    famhe_cli::main_with(famhe_cli::Cli::parse())
}
