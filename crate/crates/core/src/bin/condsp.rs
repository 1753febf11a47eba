fn main() {
    std::process::exit(condsp::cli::run(std::env::args_os()));
}
