fn main() {
    std::process::exit(adjcca::cli::main_with_args(std::env::args_os()));
}
