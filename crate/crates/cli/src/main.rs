fn main() {
    std::process::exit(nerd_cli::main_with_args(std::env::args_os()));
}
