fn main() {
    std::process::exit(adablock::cli::main_with_args(std::env::args_os()));
}
