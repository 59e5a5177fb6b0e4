fn main() {
    std::process::exit(desp::cli::run(std::env::args_os()));
}
