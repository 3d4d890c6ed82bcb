fn main() {
    std::process::exit(depthpose::cli::main_with_args(std::env::args_os()));
}
