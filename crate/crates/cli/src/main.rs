fn main() {
    std::process::exit(bcs_cli::main_with_args(std::env::args_os()));
}
