use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cbir_cli::Cli::parse();
    match cbir_cli::run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = serde_json::json!({ "error": e.record() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
