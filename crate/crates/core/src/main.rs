fn main() {
    std::process::exit(aapl::harness::run_cli(std::env::args_os()));
}
