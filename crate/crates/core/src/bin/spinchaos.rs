use clap::Parser;

fn main() {
    std::process::exit(spinchaos::cli::run(spinchaos::cli::Cli::parse()));
}
