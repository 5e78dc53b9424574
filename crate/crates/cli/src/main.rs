use clap::Parser;

fn main() {
    let cli = obfarx_cli::app::Cli::parse();
    std::process::exit(obfarx_cli::app::execute(&cli));
}
