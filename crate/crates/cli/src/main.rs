use std::process::ExitCode;

use clap::Parser;
use ldp_cli::output::ErrorRecord;
use ldp_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            for line in &report.outcome.summary {
                println!("{line}");
            }
            for p in &report.written {
                println!("wrote {}", p.display());
            }
            if report.outcome.passed {
                ExitCode::SUCCESS
            } else {
                let rec = ErrorRecord {
                    status: "error",
                    command: cli.command.name().into(),
                    kind: "check_failed".into(),
                    message: "one or more checks failed".into(),
                };
                eprintln!("{}", rec.to_json());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{}", ErrorRecord::new(cli.command.name(), &e).to_json());
            ExitCode::from(2)
        }
    }
}
