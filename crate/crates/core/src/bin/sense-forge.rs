use clap::Parser;

use sense_forge::cli::{init_threads, run, Cli};

fn main() {
    init_threads();
    std::process::exit(run(Cli::parse()));
}
