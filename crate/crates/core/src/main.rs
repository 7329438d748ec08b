fn main() {
    std::process::exit(reactnet::cli::main_with_args(std::env::args_os()));
}
