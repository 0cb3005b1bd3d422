use std::process::ExitCode;

use clap::Parser;
use memdec::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli).map_err(anyhow::Error::from) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .downcast_ref::<memdec::Error>()
                .is_some_and(memdec::Error::is_numerical);
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}
