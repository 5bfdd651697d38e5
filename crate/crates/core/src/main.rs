use clap::Parser;

use classprobe::cli::{main_with, Args};

fn main() {
    let args = Args::parse();
    if let Err(e) = main_with(args) {
        eprintln!("classprobe: {e}");
        std::process::exit(e.exit_code());
    }
}
