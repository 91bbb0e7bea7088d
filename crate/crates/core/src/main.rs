use clap::Parser;

fn main() {
    let cli = anytime_sgd::cli::Cli::parse();
    std::process::exit(anytime_sgd::cli::run(cli));
}
