fn main() {
    std::process::exit(arbiter::cli::run(std::env::args_os()));
}
