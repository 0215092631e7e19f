fn main() {
    std::process::exit(topk::cli::main_with_args(std::env::args_os()));
}
