fn main() {
    std::process::exit(ucn_cli::run_cli(std::env::args_os()));
}
