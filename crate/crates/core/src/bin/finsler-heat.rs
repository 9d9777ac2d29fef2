fn main() {
    std::process::exit(finsler_heat::cli::main_with_args(std::env::args_os()));
}
