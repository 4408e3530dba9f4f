use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use depthforge_cli::{configure_threads, render_summary, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = std::env::var("DEPTHFORGE_THREADS").ok();
    if let Err(e) = configure_threads(threads.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let start = Instant::now();
    match run(&cli) {
        Ok(report) => {
            print!("{}", render_summary(&report, start.elapsed().as_secs_f64()));
            if report.written_to.is_none() {
                print!("{}", report.to_csv());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
