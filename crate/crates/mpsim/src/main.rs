use clap::Parser;

use mpsim::cli::{self, Cli};

fn main() {
    let cli = Cli::parse();
    let outcome = cli::execute(cli);
    if !outcome.stdout.is_empty() {
        print!("{}", outcome.stdout);
    }
    if !outcome.stderr.is_empty() {
        eprint!("{}", outcome.stderr);
    }
    std::process::exit(outcome.code);
}
