fn main() {
    std::process::exit(sleepnet_cli::run(std::env::args_os()));
}
