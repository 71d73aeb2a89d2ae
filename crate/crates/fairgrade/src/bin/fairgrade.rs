use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("FAIRGRADE_LOG", "warn")).init();
    std::process::exit(fairgrade::cli::run_from(std::env::args_os()));
}
