use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = pbbsim::cli::Cli::parse();
    match pbbsim::cli::execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
