fn main() {
    std::process::exit(qconcentrator::cli::main_from_args(std::env::args_os()));
}
