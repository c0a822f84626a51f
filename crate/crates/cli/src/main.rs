use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = fnsteg_cli::Cli::parse();
    match fnsteg_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
