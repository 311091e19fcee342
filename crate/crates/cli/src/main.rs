use clap::Parser;
use sitr_cli::args::Cli;
use std::process::ExitCode;
use std::time::Instant;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let outcome = sitr_cli::run(cli);
    eprintln!("wall time: {:.3}s", start.elapsed().as_secs_f64());
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
