use std::process::ExitCode;

use clap::Parser;

use slr_cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((report, mode)) => {
            print!("{}", report.render(mode));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
