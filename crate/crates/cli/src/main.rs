fn main() {
    std::process::exit(bove_cli::main_with_args(std::env::args_os()));
}
