fn main() {
    std::process::exit(warpadam_cli::main_with_args(std::env::args_os()));
}
