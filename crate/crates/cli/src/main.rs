fn main() {
    std::process::exit(poolcal_cli::run(std::env::args_os()));
}
