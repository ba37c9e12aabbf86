fn main() {
    std::process::exit(cig_cli::main_with_args(std::env::args_os()));
}
