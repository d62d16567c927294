fn main() {
    std::process::exit(faraday3d::cli::main_with_args(std::env::args_os()));
}
