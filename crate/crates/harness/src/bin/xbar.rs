fn main() {
    std::process::exit(xbar_harness::cli::run(std::env::args_os()));
}
