fn main() {
    std::process::exit(quantspoof::cli::run_command(std::env::args_os()));
}
