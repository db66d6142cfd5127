use clap::Parser;
use trackcal::cli::{execute, Cli};

fn main() {
    if let Err(e) = execute(Cli::parse()) {
        eprintln!("error[{}]: {e}", e.kind());
        std::process::exit(1);
    }
}
