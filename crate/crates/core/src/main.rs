use clap::Parser;

fn main() {
    let cli = cpm_core::cli::Cli::parse();
    if let Err(e) = cpm_core::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
