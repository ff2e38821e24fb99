fn main() {
    std::process::exit(edgetrack::cli::main_with_args(std::env::args_os()));
}
