fn main() {
    std::process::exit(corridorflow::cli::main_with_args(std::env::args_os()));
}
