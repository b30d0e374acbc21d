fn main() {
    std::process::exit(atme_cli::run(std::env::args_os()));
}
