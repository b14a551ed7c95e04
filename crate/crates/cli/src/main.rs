fn main() {
    std::process::exit(doseopt_cli::run_cli(std::env::args_os()));
}
