use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = zvcv_cli::Cli::parse();
    if let Err(e) = zvcv_cli::run(cli) {
        eprintln!("zvcv: {e}");
        std::process::exit(e.exit_code());
    }
}
