fn main() {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let code = selfheal_cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
