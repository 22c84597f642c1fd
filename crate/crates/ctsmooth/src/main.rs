//! Exit codes: 0 success, 1 usage, 2 data or model error, 3 failed check.

use clap::Parser;
use clap::error::ErrorKind;

use ctsmooth::Error;
use ctsmooth::cli::{Cli, run};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e {
            Error::Usage(_) => 1,
            Error::CheckFailed(_) => 3,
            _ => 2,
        };
        std::process::exit(code);
    }
}
