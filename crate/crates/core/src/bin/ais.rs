fn main() {
    std::process::exit(ais_core::cli::main_with_args(std::env::args_os()));
}
