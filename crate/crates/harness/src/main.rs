use std::process::ExitCode;

use clap::Parser;

use audit_harness::commands::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            ExitCode::from(outcome.exit.code())
        }
        Err(e) => {
            let code = e.exit().code();
            eprintln!("error: {:#}", anyhow::Error::new(e));
            ExitCode::from(code)
        }
    }
}
