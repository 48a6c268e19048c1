fn main() {
    std::process::exit(subspace_newton::cli::run_cli(std::env::args_os()));
}
