fn main() {
    std::process::exit(classmc::cli::main_with_args(std::env::args_os()));
}
