fn main() {
    std::process::exit(sparse_hjb::cli::main_with_args(std::env::args_os()));
}
