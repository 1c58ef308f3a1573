fn main() {
    env_logger::init();
    std::process::exit(aliasprobe::cli::run(std::env::args_os()));
}
