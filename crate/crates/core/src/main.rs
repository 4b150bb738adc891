fn main() {
    std::process::exit(taddaa::cli::main_with_args(std::env::args_os()));
}
