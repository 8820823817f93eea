use clap::Parser;

fn main() {
    let cli = ionscope::cli::Cli::parse();
    if let Err(e) = ionscope::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
