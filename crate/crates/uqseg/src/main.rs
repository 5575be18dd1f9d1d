use clap::Parser;

use uqseg::cli::{report_error, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        report_error(&err);
        std::process::exit(err.exit_code());
    }
}
