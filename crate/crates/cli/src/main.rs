use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    // clap prints usage and exits with status 2 on bad arguments
    let cli = sparta_cli::Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match sparta_cli::run(cli, &mut out) {
        Ok(()) => {
            let _ = out.flush();
            ExitCode::SUCCESS
        }
        Err(err) => {
            let _ = out.flush();
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
