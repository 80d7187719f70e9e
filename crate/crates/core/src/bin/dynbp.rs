fn main() {
    std::process::exit(dynbp::cli::run(std::env::args_os()));
}
