fn main() {
    std::process::exit(shift::cli::run(std::env::args_os()));
}
