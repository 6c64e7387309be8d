use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = erix_cli::cli::Cli::parse();
    let stdout = std::io::stdout();
    let code = erix_cli::cli::run(cli, &mut stdout.lock());
    std::process::exit(code);
}
