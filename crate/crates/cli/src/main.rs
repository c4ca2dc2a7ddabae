use clap::Parser;

fn main() {
    let cli = efgeo_cli::Cli::parse();
    std::process::exit(efgeo_cli::run(&cli));
}
