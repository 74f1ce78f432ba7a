use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = kcl::cli::Cli::parse();
    let args: Vec<String> = std::env::args().collect();
    if let Err(e) = kcl::cli::run(cli, &args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
