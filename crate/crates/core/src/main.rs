fn main() {
    std::process::exit(stifflab::cli::main_with_args(std::env::args_os()));
}
