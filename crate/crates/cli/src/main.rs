fn main() {
    std::process::exit(drlearn_cli::run(std::env::args_os()));
}
