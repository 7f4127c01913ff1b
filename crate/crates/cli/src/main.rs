fn main() {
    std::process::exit(liqsolve_cli::run(std::env::args_os()));
}
