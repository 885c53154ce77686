use clap::Parser;

fn main() {
    let cli = diettopp_cli::Cli::parse();
    diettopp_cli::init_logging(cli.verbose);
    std::process::exit(diettopp_cli::run(cli));
}
