use clap::Parser;

fn main() {
    let cli = coxratio::cli::Cli::parse();
    std::process::exit(coxratio::cli::run(cli));
}
