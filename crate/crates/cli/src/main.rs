use std::process::ExitCode;

use clap::Parser;
use lvr_cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    lvr_cli::init_logging(cli.verbose);
    match lvr_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", lvr_cli::render_error(&e));
            ExitCode::FAILURE
        }
    }
}
