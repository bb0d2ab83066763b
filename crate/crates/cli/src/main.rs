fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    std::process::exit(autoreview_cli::main_with(std::env::args_os()));
}
