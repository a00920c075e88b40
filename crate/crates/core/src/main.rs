fn main() {
    std::process::exit(steering::cli::main_with_args(std::env::args_os()));
}
