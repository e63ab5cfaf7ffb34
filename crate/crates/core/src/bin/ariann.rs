fn main() {
    std::process::exit(ariann::cli::main_with_args(std::env::args_os()));
}
