fn main() {
    std::process::exit(pvp::cli::main_with_args(std::env::args_os()));
}
