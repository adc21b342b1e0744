fn main() {
    let code = dmar::cli::run_from_args(std::env::args_os().collect());
    std::process::exit(code);
}
